"""History-based anomaly detection with WGAN-GP training snapshots and a total-variation detector."""
