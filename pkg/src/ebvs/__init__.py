"""Event-based visual servoing: corner detection, localization, tracking and
switching control over an asynchronous event stream."""

__version__ = "0.1.0"
