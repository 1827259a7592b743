"""Shelf-image ingestion: HTTP receiver, content-addressed storage, rack preparation."""
