"""Run ledger database."""
