"""Mixed-autonomy freeway simulation under random deceleration attacks,
with GPS-trace anomaly detection and CAN-bus intrusion detection."""

__version__ = "0.1.0"
