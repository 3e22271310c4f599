"""Command-line harness: configuration, evaluation sweeps, CLI entry point."""
