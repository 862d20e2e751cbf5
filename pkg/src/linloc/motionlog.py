"""Connectivity logging for mobile runs.

The implementation lives in :mod:`linloc.mobile` to avoid an import cycle;
this module only re-exports it under a stable name.
"""

from .mobile import ConnectivityLog, ErrorProductMonitor, error_product_monitor

__all__ = ["ConnectivityLog", "ErrorProductMonitor", "error_product_monitor"]
