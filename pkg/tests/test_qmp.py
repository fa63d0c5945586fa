import json
import threading
from pathlib import Path

import pytest

from svff.errors import BindFailure
from svff.orchestrator import Orchestrator
from svff.qmp import CAPABILITIES, Dispatcher, QmpClient, QmpServer, encode_line, greeting
from svff.world import FixedClock, World

DATA_DIR = Path(__file__).parent / "data"
GOLDEN_PATH = DATA_DIR / "golden_transcript.json"


def protocol_world() -> World:
    """Two vfio-bound VFs, vm1 and vm2 defined, vm1 live."""
    world = World(clock=FixedClock())
    pf = world.bus.pf_address(0)
    world.vmm.define_vm("vm1")
    world.vmm.define_vm("vm2")
    world.vmm.start_vm("vm1")
    world.drivers.register_vfio_id(world.bus.profile.vendor_id,
                                   world.bus.profile.device_id)
    world.bus.set_num_vfs(pf, 2)
    for node in world.bus.vf_children(pf):
        world.drivers.bind_vfio(node.address)
    return world


class TestDispatcher:
    def setup_method(self):
        self.world = protocol_world()
        self.dispatcher = Dispatcher(self.world)

    def run(self, command, arguments=None, cmd_id=None):
        message = {"execute": command}
        if arguments is not None:
            message["arguments"] = arguments
        if cmd_id is not None:
            message["id"] = cmd_id
        return self.dispatcher.dispatch(message)

    def test_add_then_query(self):
        assert self.run("device_add", {"vm": "vm1", "addr": "0000:03:00.1",
                                       "id": "hostdev0"}) == {"return": {}}
        response = self.run("query-devices", {"vm": "vm1"})
        assert response["return"]["devices"] == [
            {"id": "hostdev0", "status": "attached",
             "vendor-id": "0x10ee", "device-id": "0x903f"}]

    def test_pause_cycle_and_status(self):
        self.run("device_add", {"vm": "vm1", "addr": "0000:03:00.1",
                                "id": "hostdev0"})
        assert self.run("device_pause", {"id": "hostdev0", "paused": True}) \
            == {"return": {}}
        response = self.run("query-devices", {"vm": "vm1"})
        assert response["return"]["devices"][0]["status"] == "paused"
        assert self.run("device_pause", {"id": "hostdev0", "paused": False}) \
            == {"return": {}}
        response = self.run("query-devices", {"vm": "vm1"})
        assert response["return"]["devices"][0]["status"] == "attached"

    def test_pause_twice_maps_already_paused(self):
        self.run("device_add", {"vm": "vm1", "addr": "0000:03:00.1",
                                "id": "hostdev0"})
        self.run("device_pause", {"id": "hostdev0", "paused": True})
        response = self.run("device_pause", {"id": "hostdev0", "paused": True})
        assert response["error"]["class"] == "AlreadyPaused"

    def test_unpause_never_paused(self):
        self.run("device_add", {"vm": "vm1", "addr": "0000:03:00.1",
                                "id": "hostdev0"})
        response = self.run("device_pause", {"id": "hostdev0", "paused": False})
        assert response["error"]["class"] == "NotPaused"

    def test_unknown_id(self):
        response = self.run("device_pause", {"id": "ghost", "paused": True})
        assert response["error"]["class"] == "DeviceNotFound"

    def test_del_paused_rejected(self):
        self.run("device_add", {"vm": "vm1", "addr": "0000:03:00.1",
                                "id": "hostdev0"})
        self.run("device_pause", {"id": "hostdev0", "paused": True})
        response = self.run("device_del", {"id": "hostdev0"})
        assert response["error"]["class"] == "PausedDevice"

    def test_del_then_view_empty(self):
        self.run("device_add", {"vm": "vm1", "addr": "0000:03:00.1",
                                "id": "hostdev0"})
        assert self.run("device_del", {"id": "hostdev0"}) == {"return": {}}
        assert self.run("query-devices", {"vm": "vm1"})["return"]["devices"] == []

    def test_not_pausable_profile(self):
        from svff.device_plane import DeviceProfile

        world = World(DeviceProfile(pause_supported=False), clock=FixedClock())
        world.vmm.define_vm("vm1")
        world.vmm.start_vm("vm1")
        world.drivers.register_vfio_id(world.bus.profile.vendor_id,
                                       world.bus.profile.device_id)
        world.bus.set_num_vfs(world.bus.pf_address(0), 1)
        vf = world.bus.vf_children(world.bus.pf_address(0))[0].address
        world.drivers.bind_vfio(vf)
        world.vmm.realize("vm1", vf, "hostdev0")
        response = Dispatcher(world).dispatch(
            {"execute": "device_pause",
             "arguments": {"id": "hostdev0", "paused": True}})
        assert response["error"]["class"] == "NotPausable"

    def test_command_not_found(self):
        response = self.run("frobnicate")
        assert response["error"]["class"] == "CommandNotFound"

    def test_missing_argument(self):
        response = self.run("device_pause", {"id": "hostdev0"})
        assert response["error"]["class"] == "InvalidArguments"

    def test_id_echoed_on_success_and_error(self):
        ok = self.run("query-devices", {"vm": "vm1"}, cmd_id=7)
        assert ok["id"] == 7
        err = self.run("frobnicate", cmd_id="tok")
        assert err["id"] == "tok"

    def test_ambiguous_id_needs_vm(self):
        self.run("device_add", {"vm": "vm1", "addr": "0000:03:00.1",
                                "id": "dup"})
        self.world.vmm.start_vm("vm2")
        self.run("device_add", {"vm": "vm2", "addr": "0000:03:00.2",
                                "id": "dup"})
        response = self.run("device_del", {"id": "dup"})
        assert response["error"]["class"] == "InvalidArguments"
        assert self.run("device_del", {"id": "dup", "vm": "vm2"}) == {"return": {}}

    def test_malformed_line(self):
        response = self.dispatcher.dispatch_line("{not json")
        assert response["error"]["class"] == "MalformedJson"

    def test_error_taxonomy_closed(self):
        """Every error class on the wire is a defined exception name."""
        from svff import errors

        defined = {name for name in dir(errors)
                   if isinstance(getattr(errors, name), type)
                   and issubclass(getattr(errors, name), errors.SvffError)}
        probes = [
            {"execute": "device_pause", "arguments": {"id": "x", "paused": True}},
            {"execute": "device_add", "arguments": {"vm": "nope", "addr":
                                                    "0000:03:00.1", "id": "a"}},
            {"execute": "device_del", "arguments": {"id": "x"}},
            {"execute": "nope"},
        ]
        for probe in probes:
            response = Dispatcher(protocol_world()).dispatch(probe)
            assert response["error"]["class"] in defined


def run_transcript(lines: list[str]) -> list[str]:
    """Feed raw lines through a fresh dispatcher; return raw response lines
    (greeting first), exactly as the server would write them."""
    world = protocol_world()
    dispatcher = Dispatcher(world)
    out = [encode_line(greeting()).decode().rstrip("\n")]
    for line in lines:
        out.append(encode_line(dispatcher.dispatch_line(line)).decode().rstrip("\n"))
    return out


class TestGoldenTranscript:
    def test_byte_identical_responses(self):
        golden = json.loads(GOLDEN_PATH.read_text())
        sends = [entry["send"] for entry in golden["transcript"]]
        actual = run_transcript(sends)
        expected = [golden["greeting"]] + [entry["expect"]
                                           for entry in golden["transcript"]]
        assert actual == expected

    def test_wire_determinism(self):
        golden = json.loads(GOLDEN_PATH.read_text())
        sends = [entry["send"] for entry in golden["transcript"]]
        assert run_transcript(sends) == run_transcript(sends)


class TestServer:
    @pytest.fixture
    def server(self, tmp_path):
        world = protocol_world()
        path = str(tmp_path / "qmp.sock")
        server = QmpServer(world, path)
        server.start()
        yield path, world
        server.stop()

    def test_greeting_capabilities(self, server):
        path, _ = server
        client = QmpClient(path)
        assert client.greeting == {"QMP": {"capabilities": CAPABILITIES}}
        client.close()

    def test_malformed_keeps_connection(self, server):
        path, _ = server
        client = QmpClient(path)
        client.send_raw('{"execute": ')
        assert client.read_response()["error"]["class"] == "MalformedJson"
        assert client.execute("query-devices", {"vm": "vm1"}) == \
            {"return": {"devices": []}}
        client.close()

    def test_sequential_clients(self, server):
        path, _ = server
        for _ in range(2):
            client = QmpClient(path)
            assert "QMP" in client.greeting
            assert client.execute("query-devices")["return"]["devices"] == \
                {"vm1": [], "vm2": []}
            client.close()

    def test_concurrent_clients_serialized(self, server):
        path, _ = server
        errors = []

        def worker(n):
            try:
                client = QmpClient(path)
                for i in range(20):
                    response = client.execute("query-devices", cmd_id=f"{n}/{i}")
                    assert response["id"] == f"{n}/{i}"
                client.close()
            except Exception as exc:  # noqa: BLE001
                errors.append(exc)

        threads = [threading.Thread(target=worker, args=(n,)) for n in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert errors == []

    def test_commands_mutate_shared_world(self, server):
        path, world = server
        client = QmpClient(path)
        client.execute("device_add", {"vm": "vm1", "addr": "0000:03:00.1",
                                      "id": "hostdev0"})
        client.close()
        assert len(world.vmm.guest_view("vm1")) == 1
        Orchestrator(world)  # still composable after wire use

    def test_bind_failure(self, server, tmp_path):
        path, _ = server
        with pytest.raises(BindFailure):
            QmpServer(protocol_world(), path)  # same path already bound


class TestStdio:
    def test_greeting_then_responses(self):
        import io

        from svff.qmp import serve_stdio

        stdin = io.StringIO('{"execute": "query-devices"}\n')
        stdout = io.StringIO()
        serve_stdio(protocol_world(), stdin, stdout)
        lines = stdout.getvalue().splitlines()
        assert json.loads(lines[0]) == {"QMP": {"capabilities": CAPABILITIES}}
        assert json.loads(lines[1]) == \
            {"return": {"devices": {"vm1": [], "vm2": []}}}
