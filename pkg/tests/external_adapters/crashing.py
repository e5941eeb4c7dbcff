"""Dies with a traceback before finishing the handshake."""
import sys

print("adapter boot failure: missing weights directory", file=sys.stderr)
sys.exit(3)
