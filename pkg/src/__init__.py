"""Interacting diffusions on sparse graphs and their local equations on UGW trees"""

__version__ = "0.1.0"
