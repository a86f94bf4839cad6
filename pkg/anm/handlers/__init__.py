"""Command routers and handlers."""
