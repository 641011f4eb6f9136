"""Behavioural code smell detection from execution traces of simulated Android apps."""
from .monitors import MonitorConfig, SmellInstance, SmellKind, detect
from .trace import EventsFile, LogEntry, Trace, parse_log_entry, read_events_file, read_trace, serialize_log_entry

__all__ = ["EventsFile", "LogEntry", "MonitorConfig", "SmellInstance", "SmellKind", "Trace", "detect",
           "parse_log_entry", "read_events_file", "read_trace", "serialize_log_entry"]
