"""Simulator and checkers for fast read-only transactions under causal consistency."""

from .model import ProcessId, SystemSpec, Transaction, client, server

__all__ = ["ProcessId", "SystemSpec", "Transaction", "client", "server"]
