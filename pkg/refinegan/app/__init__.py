"""Application package: configuration, domain models and services."""
