"""Run orchestration: configuration, planning, metrics, checkpoints and the CLI."""
