from hyperlab.checks.registry import CheckRegistry, CheckResult

__all__ = ["CheckRegistry", "CheckResult"]
