"""Transactional key-value store simulator: leased client caches over
optimistic timestamp validation, with a deterministic discrete-event network."""

__version__ = "0.1.0"
