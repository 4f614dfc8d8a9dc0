"""Federated IoT data-exchange middleware: broker fleet, gateway, auth store and load harness."""

__version__ = "0.1.0"
