"""Limit-order-book embeddings, forecasters and a market-making backtester."""

__version__ = "0.1.0"
