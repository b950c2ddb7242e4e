"""Koopman system identification with total EDMD and stability constraints."""
