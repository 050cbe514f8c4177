"""Online crowd anomaly detection."""
