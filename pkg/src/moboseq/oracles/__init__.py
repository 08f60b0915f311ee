"""Bundled external oracles speaking the line protocol."""
