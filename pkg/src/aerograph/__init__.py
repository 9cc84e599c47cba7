"""Graph-recurrent forecasting of regional case counts from flight networks."""

__version__ = "0.1.0"
