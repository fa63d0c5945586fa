"""JSON-line control protocol for the device lifecycle.

The dialect follows the monitor-protocol shape (execute/arguments paired
with return/error responses) but is deliberately minimal: four commands,
one JSON object per newline-terminated UTF-8 line, synchronous execution.
Identical command sequences produce byte-identical response lines: field
order is fixed and the correlation id, when present, is echoed last.

    >>> {"execute": "device_pause", "arguments": {"id": "hostdev0", "paused": true}}
    {"return": {}}
"""

from __future__ import annotations

import json
import os
import socket
import socketserver
import threading

from .errors import (
    BindFailure,
    CommandNotFound,
    DeviceNotFound,
    InvalidArguments,
    NotPausable,
    SvffError,
)
from .pci import PciAddress
from .world import World

CAPABILITIES = ["device_pause", "device_add", "device_del", "query-devices"]


def greeting() -> dict:
    return {"QMP": {"capabilities": list(CAPABILITIES)}}


class Dispatcher:
    """Executes protocol commands against a world.

    Also used in-process by the orchestrator, so the pause path of a
    reconfiguration really is the wire command's path.
    """

    def __init__(self, world: World):
        self.world = world

    # -- command plumbing --

    def dispatch(self, command: dict) -> dict:
        cmd_id = command.get("id") if isinstance(command, dict) else None
        try:
            if not isinstance(command, dict) or "execute" not in command:
                raise InvalidArguments("expected an object with an 'execute' key")
            name = command["execute"]
            args = command.get("arguments", {})
            if not isinstance(args, dict):
                raise InvalidArguments("'arguments' must be an object")
            handler = self._HANDLERS.get(name)
            if handler is None:
                raise CommandNotFound(f"command {name!r} is not supported")
            result = handler(self, args)
            return self._success(result, cmd_id)
        except SvffError as exc:
            return self._error(exc.error_class, str(exc), cmd_id)

    def dispatch_line(self, line: str) -> dict:
        try:
            command = json.loads(line)
        except json.JSONDecodeError as exc:
            return self._error("MalformedJson", f"invalid JSON: {exc}", None)
        return self.dispatch(command)

    @staticmethod
    def _success(result: dict, cmd_id) -> dict:
        response = {"return": result}
        if cmd_id is not None:
            response["id"] = cmd_id
        return response

    @staticmethod
    def _error(error_class: str, desc: str, cmd_id) -> dict:
        response = {"error": {"class": error_class, "desc": desc}}
        if cmd_id is not None:
            response["id"] = cmd_id
        return response

    # -- argument helpers --

    @staticmethod
    def _require(args: dict, key: str, kind: type) -> object:
        if key not in args:
            raise InvalidArguments(f"missing argument {key!r}")
        value = args[key]
        if not isinstance(value, kind):
            raise InvalidArguments(f"argument {key!r} must be {kind.__name__}")
        return value

    def _resolve_device(self, args: dict) -> tuple[str, str]:
        """(vm, guest_id) for an id, searching all VMs unless vm is given."""
        guest_id = self._require(args, "id", str)
        if "vm" in args:
            vm_name = self._require(args, "vm", str)
            self.world.vmm.vm(vm_name)
            if guest_id not in self.world.vmm.vms[vm_name].devices:
                raise DeviceNotFound(f"VM {vm_name!r} has no device {guest_id!r}")
            return vm_name, guest_id
        holders = self.world.vmm.find_guest_id(guest_id)
        if not holders:
            raise DeviceNotFound(f"no attached device with id {guest_id!r}")
        if len(holders) > 1:
            raise InvalidArguments(
                f"id {guest_id!r} exists in VMs {holders}; pass 'vm' to disambiguate")
        return holders[0], guest_id

    # -- handlers --

    def _device_pause(self, args: dict) -> dict:
        paused = self._require(args, "paused", bool)
        vm_name, guest_id = self._resolve_device(args)
        if not self.world.bus.profile.pause_supported:
            raise NotPausable("device class does not provide a pause function")
        if paused:
            self.world.vmm.pause(vm_name, guest_id)
        else:
            self.world.vmm.unpause(vm_name, guest_id)
        return {}

    def _device_add(self, args: dict) -> dict:
        vm_name = self._require(args, "vm", str)
        guest_id = self._require(args, "id", str)
        addr = PciAddress.parse(str(self._require(args, "addr", str)))
        self.world.vmm.realize(vm_name, addr, guest_id)
        return {}

    def _device_del(self, args: dict) -> dict:
        vm_name, guest_id = self._resolve_device(args)
        self.world.vmm.exit_device(vm_name, guest_id)
        return {}

    def _query_devices(self, args: dict) -> dict:
        def rows(vm_name: str) -> list[dict]:
            return [
                {
                    "id": v.guest_id,
                    "status": v.status,
                    "vendor-id": f"0x{v.vendor_id:04x}",
                    "device-id": f"0x{v.device_id:04x}",
                }
                for v in self.world.vmm.guest_view(vm_name)
            ]

        if "vm" in args:
            vm_name = self._require(args, "vm", str)
            return {"devices": rows(vm_name)}
        return {"devices": {name: rows(name) for name in sorted(self.world.vmm.vms)}}

    _HANDLERS = {
        "device_pause": _device_pause,
        "device_add": _device_add,
        "device_del": _device_del,
        "query-devices": _query_devices,
    }


def encode_line(obj: dict) -> bytes:
    return (json.dumps(obj) + "\n").encode("utf-8")


class QmpServer:
    """Threaded unix-socket server; one command in flight at a time."""

    def __init__(self, world: World, socket_path: str,
                 on_command=None):
        self.dispatcher = Dispatcher(world)
        self.socket_path = socket_path
        self.on_command = on_command
        self._lock = threading.Lock()

        dispatcher = self.dispatcher
        lock = self._lock
        notify = self.on_command

        class Handler(socketserver.StreamRequestHandler):
            def handle(self) -> None:
                self.wfile.write(encode_line(greeting()))
                for raw in self.rfile:
                    line = raw.decode("utf-8", errors="replace").strip()
                    if not line:
                        continue
                    with lock:
                        response = dispatcher.dispatch_line(line)
                        if notify is not None:
                            notify()
                    self.wfile.write(encode_line(response))

        class Server(socketserver.ThreadingUnixStreamServer):
            daemon_threads = True
            allow_reuse_address = False

        try:
            self._server = Server(socket_path, Handler)
        except OSError as exc:
            raise BindFailure(f"cannot bind {socket_path}: {exc}") from exc
        self._thread: threading.Thread | None = None

    def start(self) -> None:
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        kwargs={"poll_interval": 0.05}, daemon=True)
        self._thread.start()

    def serve_forever(self) -> None:
        self._server.serve_forever(poll_interval=0.05)

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
        if os.path.exists(self.socket_path):
            os.unlink(self.socket_path)


def serve_stdio(world: World, stdin, stdout, on_command=None) -> None:
    """Stdio transport: greeting, then one response line per input line."""
    dispatcher = Dispatcher(world)
    stdout.write(encode_line(greeting()).decode("utf-8"))
    stdout.flush()
    for raw in stdin:
        line = raw.strip()
        if not line:
            continue
        response = dispatcher.dispatch_line(line)
        if on_command is not None:
            on_command()
        stdout.write(encode_line(response).decode("utf-8"))
        stdout.flush()


class QmpClient:
    """Line-oriented client for the unix-socket server."""

    def __init__(self, socket_path: str, timeout: float = 10.0):
        self._sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        self._sock.settimeout(timeout)
        self._sock.connect(socket_path)
        self._buffer = b""
        self.greeting = self._read_message()

    def execute(self, command: str, arguments: dict | None = None,
                cmd_id=None) -> dict:
        message: dict = {"execute": command}
        if arguments is not None:
            message["arguments"] = arguments
        if cmd_id is not None:
            message["id"] = cmd_id
        self.send_raw(json.dumps(message))
        return self._read_message()

    def send_raw(self, line: str) -> None:
        self._sock.sendall(line.encode("utf-8") + b"\n")

    def read_response(self) -> dict:
        return self._read_message()

    def _read_message(self) -> dict:
        while b"\n" not in self._buffer:
            chunk = self._sock.recv(4096)
            if not chunk:
                raise ConnectionError("server closed the connection")
            self._buffer += chunk
        line, self._buffer = self._buffer.split(b"\n", 1)
        return json.loads(line.decode("utf-8"))

    def close(self) -> None:
        self._sock.close()
