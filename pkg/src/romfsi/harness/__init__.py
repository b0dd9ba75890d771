"""Configuration, persistence, experiment orchestration and the command line."""
