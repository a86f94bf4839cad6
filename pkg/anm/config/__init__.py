"""Runtime settings and experiment configs."""
