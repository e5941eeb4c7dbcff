"""Speaks valid framing but an unknown message type instead of a result."""
import _proto

_proto.send_hello("tracking", "ext-bogus")
_proto.read_request()
_proto.write_message(_proto.sys.stdout.buffer, {"type": "telemetry", "cpu": 0.5})
