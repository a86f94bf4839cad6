"""Help strings and console messages."""
