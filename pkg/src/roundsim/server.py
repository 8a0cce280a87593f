"""Realtime session server: a human drives the opponent against the adaptive ego.

Each socket connection owns one session; each session runs at most one live
episode at a time, advanced on a wall clock whose period is the sim step dt.
The human's latest action command before a tick deadline is applied at that
tick; with no fresh command the previous action repeats (keyboard-hold
semantics). A frame goes out after every tick, and the frame that carries a
non-null outcome is the last one of its episode.

Messages are JSON objects over a WebSocket, every one carrying a schema
version field. Malformed input produces an error frame and the session keeps
going; a disconnect tears the session down and writes the episode log.
"""

from __future__ import annotations

import asyncio
import itertools
import json
import logging
import os

import numpy as np

from .approximation import NNBundle, load_approximator
from .config import MODEL_FILES, RunConfig
from .geometry import RoundaboutLayout, layout_to_dict
from .kinematics import ACTION_BY_ID
from .scenarios import SCENARIOS
from .simulator import Episode, EpisodeResult, sample_scenario, write_episode_log

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
_SESSION_IDS = itertools.count(1)


def _vehicle_dict(s) -> dict:
    return {"x": s.x, "y": s.y, "v": s.v, "theta": s.theta}


class SessionServer:
    """Shared read-only context for all sessions: config, layout, models."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.layout = cfg.load_layout()
        self.params = cfg.sim_params()
        self._nets = None
        if cfg.estimator == "nn":
            model_dir = cfg.require_models()
            self._nets = tuple(
                load_approximator(os.path.join(model_dir, name)) for name in MODEL_FILES
            )
        os.makedirs(cfg.output_dir, exist_ok=True)

    def bundle_for(self, layout: RoundaboutLayout) -> NNBundle | None:
        if self._nets is None:
            return None
        return NNBundle(*self._nets, layout)

    def scenario_catalog(self) -> list[dict]:
        entries = [
            {"id": s.id, "description": s.description} for s in SCENARIOS.values()
        ]
        entries.append(
            {
                "id": "random",
                "description": "Freshly sampled entry scenario; the seed picks it.",
            }
        )
        return entries

    async def handle(self, websocket) -> None:
        session = Session(self, websocket)
        await session.run()


class Session:
    """One connection: layout handshake, command handling, the tick loop."""

    def __init__(self, server: SessionServer, websocket):
        self.server = server
        self.ws = websocket
        self.id = next(_SESSION_IDS)
        self.episode: Episode | None = None
        self.layout: RoundaboutLayout | None = None
        self.tick_task: asyncio.Task | None = None
        self.paused = False
        self._episode_count = 0
        self._last_layout_sent: dict | None = None

    async def send(self, payload: dict) -> None:
        await self.ws.send(json.dumps(payload))

    async def send_error(self, message: str) -> None:
        await self.send({"v": PROTOCOL_VERSION, "type": "error", "message": message})

    async def send_layout(self, layout: RoundaboutLayout) -> None:
        body = layout_to_dict(layout)
        if body == self._last_layout_sent:
            return
        self._last_layout_sent = body
        await self.send(
            {
                "v": PROTOCOL_VERSION,
                "type": "layout",
                "layout": body,
                "dt": self.server.params.dt,
                "scenarios": self.server.scenario_catalog(),
            }
        )

    async def run(self) -> None:
        from websockets.exceptions import ConnectionClosed

        await self.send_layout(self.server.layout)
        try:
            async for raw in self.ws:
                await self.handle_message(raw)
        except ConnectionClosed:
            pass
        finally:
            await self.stop_episode()

    async def handle_message(self, raw) -> None:
        try:
            msg = json.loads(raw)
        except (json.JSONDecodeError, UnicodeDecodeError):
            await self.send_error("message is not valid JSON")
            return
        if not isinstance(msg, dict):
            await self.send_error("message must be a JSON object")
            return
        kind = msg.get("type")
        if kind == "start":
            await self.handle_start(msg)
        elif kind == "action":
            await self.handle_action(msg)
        elif kind == "reset":
            await self.stop_episode()
        elif kind == "pause":
            self.paused = not self.paused
        else:
            await self.send_error(f"unknown message type {kind!r}")

    async def handle_start(self, msg: dict) -> None:
        if self.episode is not None and not self.episode.finished:
            await self.send_error("episode already running; send reset first")
            return
        scenario_id = msg.get("scenario", "random")
        try:
            seed = int(msg.get("seed", 0))
        except (TypeError, ValueError):
            await self.send_error("seed must be an integer")
            return
        try:
            episode, layout = self.build_episode(scenario_id, seed)
        except KeyError:
            known = ", ".join(e["id"] for e in self.server.scenario_catalog())
            await self.send_error(f"unknown scenario {scenario_id!r}; known: {known}")
            return
        except Exception as e:  # bad spawn/routes on this layout, etc.
            await self.send_error(f"cannot start {scenario_id!r}: {e}")
            return
        await self.stop_episode()
        self.episode = episode
        self.layout = layout
        self.paused = False
        self._episode_count += 1
        await self.send_layout(layout)
        self.tick_task = asyncio.create_task(self.tick_loop())

    def build_episode(self, scenario_id: str, seed: int) -> tuple[Episode, RoundaboutLayout]:
        cfg = self.server.cfg
        if scenario_id == "random":
            layout = self.server.layout
            rng = np.random.default_rng(np.random.SeedSequence(seed))
            ecfg = sample_scenario(
                rng,
                layout,
                self.server.params,
                opp_kinds=("external",),
                seed=seed,
                estimator_mode=cfg.estimator,
            )
        else:
            scenario = SCENARIOS[scenario_id]
            layout = scenario.layout()
            ecfg = scenario.config(
                opp_kind="external", seed=seed, estimator_mode=cfg.estimator
            )
        bundle = self.server.bundle_for(layout)
        return Episode(ecfg, layout, w=cfg.weights, nn=bundle), layout

    async def handle_action(self, msg: dict) -> None:
        if self.episode is None or self.episode.finished:
            await self.send_error("no live episode; send start first")
            return
        action_id = msg.get("id")
        if not isinstance(action_id, int) or action_id not in ACTION_BY_ID:
            await self.send_error(f"action id must be an integer in 1..6, got {action_id!r}")
            return
        self.episode.opp.inject(ACTION_BY_ID[action_id])

    async def tick_loop(self) -> None:
        ep = self.episode
        dt = ep.cfg.params.dt
        await self.send(self.initial_frame(ep))
        loop = asyncio.get_running_loop()
        deadline = loop.time() + dt
        try:
            while not ep.finished:
                delay = deadline - loop.time()
                if delay > 0:
                    await asyncio.sleep(delay)
                if self.paused:
                    deadline = loop.time() + dt
                    continue
                rec = ep.advance()
                deadline += dt
                await self.send(self.frame(ep, rec))
        except asyncio.CancelledError:
            raise
        finally:
            self.write_log(ep)

    def initial_frame(self, ep: Episode) -> dict:
        return {
            "v": PROTOCOL_VERSION,
            "type": "frame",
            "tick": 0,
            "t": 0.0,
            "ego": _vehicle_dict(ep.cfg.initial.ego),
            "opp": _vehicle_dict(ep.cfg.initial.opp),
            "p2": ep.p2,
            "critical": False,
            "outcome": None,
            "actions": None,
            "starved": False,
        }

    def frame(self, ep: Episode, rec) -> dict:
        return {
            "v": PROTOCOL_VERSION,
            "type": "frame",
            "tick": rec.tick,
            "t": rec.tick * ep.cfg.params.dt,
            "ego": _vehicle_dict(rec.ego),
            "opp": _vehicle_dict(rec.opp),
            "p2": rec.p2,
            "critical": rec.critical,
            "outcome": ep.outcome,
            "actions": {"ego": rec.ego_action, "opp": rec.opp_action},
            "starved": rec.starved,
        }

    async def stop_episode(self) -> None:
        task, self.tick_task = self.tick_task, None
        if task is not None and not task.done():
            task.cancel()
            try:
                await task
            except asyncio.CancelledError:
                pass
        self.episode = None

    def write_log(self, ep: Episode) -> None:
        result = EpisodeResult(
            outcome=ep.outcome if ep.outcome is not None else "aborted",
            ticks=ep.tick,
            initial=ep.cfg.initial,
            records=tuple(ep.records),
            config=ep.cfg,
        )
        path = os.path.join(
            self.server.cfg.output_dir,
            f"session{self.id:04d}_ep{self._episode_count:03d}.jsonl",
        )
        try:
            write_episode_log(path, result, ep.layout)
        except OSError:
            log.exception("could not write episode log %s", path)


async def serve_async(cfg: RunConfig, host: str = "127.0.0.1", port: int = 8765):
    """Run the WebSocket server until cancelled."""
    from websockets.asyncio.server import serve as ws_serve

    server = SessionServer(cfg)
    async with ws_serve(server.handle, host, port) as ws_server:
        log.info("session server listening on ws://%s:%d", host, port)
        await ws_server.serve_forever()


def serve(cfg: RunConfig, host: str = "127.0.0.1", port: int = 8765) -> None:
    """Blocking entry point for the CLI."""
    try:
        asyncio.run(serve_async(cfg, host, port))
    except KeyboardInterrupt:
        pass
