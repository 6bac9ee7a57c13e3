"""Chat service over a local TCP socket.

Wire protocol: every message (both directions) is a 4-byte big-endian
length prefix followed by that many bytes of UTF-8 JSON.  A connection
may carry any number of request/response pairs.

Requests are objects with an "op" field:

  {"op": "list_worlds"}
      -> {"ok": true, "worlds": ["home", ...]}
  {"op": "create_session", "world": "home"}
      -> {"ok": true, "session": "<id>", "created": <float>,
          "state": "S0", "greeting": "..."}
  {"op": "post_utterance", "session": "<id>", "text": "..."}
      -> {"ok": true, "response": "...", "terminal": null | "...",
          "events": [{"kind": ..., "payload": {...}, "seq": n}, ...]}
         (events are the ones produced by this step)
  {"op": "get_events", "session": "<id>", "since": n}
      -> {"ok": true, "events": [...]}   all events with seq >= n,
         in order; clients deduplicate by seq (at-least-once feed)
  {"op": "snapshot", "session": "<id>"}
      -> {"ok": true, "state": ..., "terminal": ..., "pending": null |
          {"kind", "subject", "text", "expected", "choices", "slot"},
          "transcript": [["agent"|"user", text], ...], "next_seq": n,
          "world": {"locations": {...}, "robot": ..., "objects": {...},
                    "devices": {...}, "persons": {...}}}

Errors: {"ok": false, "error": "unknown-world" | "unknown-session" |
"session-terminated" | "bad-request", "message": "..."}
"""

from __future__ import annotations

import json
import socket
import socketserver
import struct
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from . import simworld
from .crf import CrfModel
from .dialogue import DialogueConfig, DialogueEngine, InteractionHistory
from .intents import IntentModel
from .interpreter import Interpreter
from .kb import GRIPPER, WorldModel, load_world


# -- framing --------------------------------------------------------------

def send_message(sock, obj) -> None:
    data = json.dumps(obj, sort_keys=True).encode("utf-8")
    sock.sendall(struct.pack(">I", len(data)) + data)


def recv_message(sock):
    """One framed message, or None on clean EOF."""
    header = _recv_exact(sock, 4)
    if header is None:
        return None
    (length,) = struct.unpack(">I", header)
    body = _recv_exact(sock, length)
    if body is None:
        raise ConnectionError("truncated message")
    return json.loads(body.decode("utf-8"))


def _recv_exact(sock, n):
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None if not buf else buf or None
        buf += chunk
    return buf


# -- config ---------------------------------------------------------------

@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 0                  # 0 = ephemeral
    data_dir: str = "."
    model_dir: str = "models"
    worlds: dict = field(default_factory=dict)   # name -> path (None=bundled)
    confidence_threshold: float = 0.6
    history_weight: float = 2.0
    planner_budget: int = 100_000

    @classmethod
    def from_file(cls, path) -> "ServiceConfig":
        with open(path) as fh:
            doc = json.load(fh)
        cfg = cls()
        for key, value in doc.items():
            if not hasattr(cfg, key):
                raise ValueError(f"unknown config key {key!r}")
            setattr(cfg, key, value)
        return cfg


# -- sessions -------------------------------------------------------------

class _Session:
    def __init__(self, sid, engine, dialogue_session, base_world):
        self.id = sid
        self.created = time.time()
        self.engine = engine
        self.dialogue = dialogue_session
        self.render_world = base_world.copy()
        self.events = []
        self.next_seq = 0
        self.lock = threading.Lock()


class TcarService:
    """Holds the shared immutable models and all live sessions."""

    def __init__(self, interpreter: Interpreter, intent_model: IntentModel,
                 worlds: dict, config: ServiceConfig | None = None,
                 training_records=None):
        self.config = config or ServiceConfig()
        self.interpreter = interpreter
        self.intent_model = intent_model
        self.worlds = worlds
        self.training_records = training_records or []
        self.sessions = {}
        self._sessions_lock = threading.Lock()
        data_dir = Path(self.config.data_dir)
        data_dir.mkdir(parents=True, exist_ok=True)
        self.history = InteractionHistory(path=data_dir / "history.jsonl")
        self._server = None

    @classmethod
    def from_config(cls, config: ServiceConfig) -> "TcarService":
        mdir = Path(config.model_dir)
        interp = Interpreter(
            task_model=CrfModel.from_file(mdir / "task.model"),
            arg_model=CrfModel.from_file(mdir / "argument.model"),
            argonly_model=CrfModel.from_file(mdir / "argument-only.model"))
        intent = IntentModel.from_file(mdir / "intent.model")
        worlds = {}
        names = config.worlds or {"home": None}
        for name, path in names.items():
            worlds[name] = load_world(path)
        recs = []
        corpus = mdir / "training_corpus.jsonl"
        if corpus.exists():
            for rec in simworld.read_corpus(corpus):
                for frame in rec.frames:
                    recs.append((frame.task_type, set(frame.args)))
        return cls(interp, intent, worlds, config, training_records=recs)

    # -- operations ------------------------------------------------------

    def handle(self, request: dict) -> dict:
        if not isinstance(request, dict) or "op" not in request:
            return _err("bad-request", "missing op")
        op = request["op"]
        try:
            if op == "list_worlds":
                return {"ok": True, "worlds": sorted(self.worlds)}
            if op == "create_session":
                return self._create(request.get("world", "home"))
            if op == "post_utterance":
                return self._post(request.get("session"),
                                  request.get("text", ""))
            if op == "get_events":
                return self._events(request.get("session"),
                                    int(request.get("since", 0)))
            if op == "snapshot":
                return self._snapshot(request.get("session"))
            return _err("bad-request", f"unknown op {op!r}")
        except KeyError:
            return _err("unknown-session", "no such session")

    def _create(self, world_name) -> dict:
        world = self.worlds.get(world_name)
        if world is None:
            return _err("unknown-world", f"no world {world_name!r}")
        cfg = DialogueConfig(
            confidence_threshold=self.config.confidence_threshold,
            history_weight=self.config.history_weight)
        engine = DialogueEngine(self.interpreter, self.intent_model, world,
                                config=cfg, history=self.history,
                                training_records=self.training_records,
                                planner_budget=self.config.planner_budget)
        dialogue, greeting = engine.new_session()
        sid = uuid.uuid4().hex
        dialogue.session_id = sid
        sess = _Session(sid, engine, dialogue, world)
        with self._sessions_lock:
            self.sessions[sid] = sess
        return {"ok": True, "session": sid, "created": sess.created,
                "state": dialogue.state, "greeting": greeting}

    def _post(self, sid, text) -> dict:
        sess = self.sessions[sid]
        with sess.lock:
            if sess.dialogue.terminal is not None:
                return _err("session-terminated",
                            f"session ended: {sess.dialogue.terminal}")
            plans_before = len(sess.dialogue.plans)
            result = sess.engine.step(sess.dialogue, text)
            new = []
            if result.execution is not None:
                for _, _, plan in result.execution.items[plans_before:]:
                    evs, _ = simworld.execute(plan, sess.render_world,
                                              start_seq=sess.next_seq)
                    for ev in evs:
                        new.append({"kind": ev.kind, "payload": ev.payload,
                                    "seq": ev.seq})
                    sess.next_seq = evs[-1].seq + 1
                sess.events.extend(new)
            return {"ok": True, "response": result.response,
                    "terminal": sess.dialogue.terminal, "events": new}

    def _events(self, sid, since) -> dict:
        sess = self.sessions[sid]
        with sess.lock:
            return {"ok": True,
                    "events": [e for e in sess.events if e["seq"] >= since]}

    def _snapshot(self, sid) -> dict:
        sess = self.sessions[sid]
        with sess.lock:
            d = sess.dialogue
            pending = None
            if d.pending is not None:
                pending = {"kind": d.pending.kind, "subject": d.pending.subject,
                           "text": d.pending.text, "expected": d.pending.expected,
                           "choices": list(d.pending.choices),
                           "slot": d.pending.slot}
            return {"ok": True, "state": d.state, "terminal": d.terminal,
                    "pending": pending,
                    "transcript": [list(t) for t in d.transcript],
                    "next_seq": sess.next_seq,
                    "world": _world_view(sess.render_world)}

    # -- socket server ---------------------------------------------------

    def serve(self, block: bool = True):
        service = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                while True:
                    try:
                        request = recv_message(self.request)
                    except (ConnectionError, json.JSONDecodeError):
                        break
                    if request is None:
                        break
                    send_message(self.request, service.handle(request))

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = Server((self.config.host, self.config.port), Handler)
        self.address = self._server.server_address
        if block:
            self._server.serve_forever()
        else:
            thread = threading.Thread(target=self._server.serve_forever,
                                      daemon=True)
            thread.start()
        return self.address

    def shutdown(self):
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()


def _world_view(world: WorldModel) -> dict:
    return {
        "locations": {name: sorted(adj)
                      for name, adj in sorted(world.locations.items())},
        "robot": world.robot_location,
        "gripper": world.gripper,
        "objects": {o.name: ("gripper" if o.location == GRIPPER
                             else o.location)
                    for o in world.objects.values()},
        "devices": {d.name: {"location": d.location, "state": d.state}
                    for d in world.devices.values()},
        "persons": dict(world.persons),
    }


def _err(code, message) -> dict:
    return {"ok": False, "error": code, "message": message}


class ServiceClient:
    """Minimal blocking client for tests and the terminal tools."""

    def __init__(self, host, port):
        self.sock = socket.create_connection((host, port))

    def call(self, **request):
        send_message(self.sock, request)
        reply = recv_message(self.sock)
        if reply is None:
            raise ConnectionError("service closed the connection")
        return reply

    def close(self):
        self.sock.close()
