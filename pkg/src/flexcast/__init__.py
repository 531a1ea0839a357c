"""Virtual-battery flexibility envelopes for thermally flexible buildings."""

__version__ = "0.1.0"
