"""Application package: configuration and the experiment runner that drives the backend."""
