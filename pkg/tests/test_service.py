import json
import socket
import struct
import threading

import pytest

from tcar.dialogue import WELCOME_RESPONSES
from tcar.kb import load_world
from tcar.service import (ServiceClient, ServiceConfig, TcarService,
                          recv_message, send_message)


@pytest.fixture(scope="module")
def service(tmp_path_factory, trained):
    cfg = ServiceConfig(data_dir=str(tmp_path_factory.mktemp("svc")))
    svc = TcarService(trained["interpreter"], trained["intent"],
                      {"home": load_world()}, config=cfg,
                      training_records=trained["ranking"])
    host, port = svc.serve(block=False)
    yield svc, host, port
    svc.shutdown()


@pytest.fixture
def client(service):
    _, host, port = service
    c = ServiceClient(host, port)
    yield c
    c.close()


def test_framing_round_trip():
    a, b = socket.socketpair()
    try:
        send_message(a, {"op": "x", "n": 3})
        assert recv_message(b) == {"op": "x", "n": 3}
        a.close()
        assert recv_message(b) is None     # clean EOF
    finally:
        b.close()


def test_list_worlds(client):
    assert client.call(op="list_worlds") == {"ok": True, "worlds": ["home"]}


def test_create_session_greets(client):
    r = client.call(op="create_session", world="home")
    assert r["ok"] and r["state"] == "S0"
    assert r["greeting"] in WELCOME_RESPONSES
    r2 = client.call(op="create_session", world="home")
    assert r2["session"] != r["session"]


def test_unknown_world_and_session(client):
    r = client.call(op="create_session", world="mars")
    assert r == {"ok": False, "error": "unknown-world",
                 "message": "no world 'mars'"}
    r = client.call(op="post_utterance", session="nope", text="hi")
    assert r["error"] == "unknown-session"
    r = client.call(op="bogus_op")
    assert r["error"] == "bad-request"
    r = client.call(op="post_utterance")
    assert r["error"] == "unknown-session"


def test_instruction_produces_events(client):
    sid = client.call(op="create_session", world="home")["session"]
    r = client.call(op="post_utterance", session=sid, text="go to the kitchen")
    assert r["ok"] and r["terminal"] == "executed"
    kinds = [e["kind"] for e in r["events"]]
    assert kinds == ["move", "speak"]
    assert r["events"][0]["payload"] == {"from": "hall", "to": "kitchen"}
    assert [e["seq"] for e in r["events"]] == [0, 1]
    snap = client.call(op="snapshot", session=sid)
    assert snap["world"]["robot"] == "kitchen"
    assert snap["next_seq"] == 2
    assert snap["terminal"] == "executed"
    assert snap["transcript"][-1][0] == "agent"


def test_event_feed_supports_replay(client):
    sid = client.call(op="create_session", world="home")["session"]
    r = client.call(op="post_utterance", session=sid,
                    text="bring the mug to the office")
    total = len(r["events"])
    feed = client.call(op="get_events", session=sid, since=0)["events"]
    assert feed == r["events"]
    tail = client.call(op="get_events", session=sid, since=total - 1)["events"]
    assert len(tail) == 1 and tail[0]["kind"] == "speak"
    empty = client.call(op="get_events", session=sid, since=total)["events"]
    assert empty == []


def test_pending_question_in_snapshot(client):
    sid = client.call(op="create_session", world="home")["session"]
    r = client.call(op="post_utterance", session=sid, text="put down the mug")
    assert r["terminal"] is None and r["events"] == []
    snap = client.call(op="snapshot", session=sid)
    pending = snap["pending"]
    assert pending["kind"] == "elicit-argument"
    assert pending["slot"] == "goal-location"
    r = client.call(op="post_utterance", session=sid, text="the office")
    assert r["terminal"] == "executed"
    assert any(e["kind"] == "place" for e in r["events"])


def test_terminated_session_rejects_posts(client):
    sid = client.call(op="create_session", world="home")["session"]
    client.call(op="post_utterance", session=sid, text="goodbye")
    r = client.call(op="post_utterance", session=sid, text="hello")
    assert r == {"ok": False, "error": "session-terminated",
                 "message": "session ended: bye"}
    # feed and snapshot stay readable after the end of the conversation
    assert client.call(op="get_events", session=sid, since=0)["ok"]
    assert client.call(op="snapshot", session=sid)["ok"]


def test_sessions_are_isolated(client):
    a = client.call(op="create_session", world="home")["session"]
    b = client.call(op="create_session", world="home")["session"]
    client.call(op="post_utterance", session=a, text="go to the bedroom")
    snap_a = client.call(op="snapshot", session=a)
    snap_b = client.call(op="snapshot", session=b)
    assert snap_a["world"]["robot"] == "bedroom"
    assert snap_b["world"]["robot"] == "hall"


def test_concurrent_posts_serialize(service):
    svc, host, port = service
    sid = ServiceClient(host, port).call(op="create_session",
                                         world="home")["session"]
    errors = []

    def worker(text):
        c = ServiceClient(host, port)
        try:
            c.call(op="post_utterance", session=sid, text=text)
        except Exception as exc:   # noqa: BLE001
            errors.append(exc)
        finally:
            c.close()

    threads = [threading.Thread(target=worker, args=("go to the kitchen",))
               for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    c = ServiceClient(host, port)
    events = c.call(op="get_events", session=sid, since=0)["events"]
    c.close()
    seqs = [e["seq"] for e in events]
    assert seqs == sorted(set(seqs))   # no duplicate or reordered seq


def test_history_shared_across_sessions(service, tmp_path):
    svc, host, port = service
    c = ServiceClient(host, port)
    before = len(svc.history.records)
    sid = c.call(op="create_session", world="home")["session"]
    c.call(op="post_utterance", session=sid, text="take the mug")
    c.close()
    assert len(svc.history.records) > before
    path = svc.history.path
    lines = [json.loads(l) for l in open(path) if l.strip()]
    assert len(lines) == len(svc.history.records)


def test_from_config_loads_model_dir(model_dir, tmp_path):
    cfg = ServiceConfig(model_dir=str(model_dir), data_dir=str(tmp_path))
    svc = TcarService.from_config(cfg)
    assert svc.training_records
    host, port = svc.serve(block=False)
    try:
        c = ServiceClient(host, port)
        sid = c.call(op="create_session", world="home")["session"]
        r = c.call(op="post_utterance", session=sid, text="go to the office")
        assert r["terminal"] == "executed"
        c.close()
    finally:
        svc.shutdown()


def test_config_file_rejects_unknown_keys(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"port": 1234, "volume": 11}))
    with pytest.raises(ValueError):
        ServiceConfig.from_file(p)
    p.write_text(json.dumps({"port": 1234}))
    assert ServiceConfig.from_file(p).port == 1234


def test_truncated_frame_drops_connection(service):
    _, host, port = service
    sock = socket.create_connection((host, port))
    sock.sendall(struct.pack(">I", 10) + b"{}")   # promised 10, sent 2
    sock.close()
    # the server must survive it and keep answering
    c = ServiceClient(host, port)
    assert c.call(op="list_worlds")["ok"]
    c.close()
