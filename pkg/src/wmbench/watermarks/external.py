"""Executable-adapter contract for schemes and attacks implemented elsewhere.

An adapter is any command (list of argv words) that understands

    <cmd> embed  --in IN.png --key KEY.json --out OUT.png
    <cmd> detect --in IN.png --key KEY.json          -> stdout JSON {"statistic": .., "decoded": ".."|null}
    <cmd> attack --in IN.png --out OUT.png --params PARAMS.json

and exits 0 on success. Anything else is an :class:`AdapterError`.
"""

from __future__ import annotations

import json
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..core import ImageBuffer, load_png, save_png
from .keys import WatermarkKey


class AdapterError(RuntimeError):
    pass


def _argv(command) -> list:
    return shlex.split(command) if isinstance(command, str) else list(command)


@dataclass(frozen=True)
class ExternalAdapter:
    command: Sequence[str]
    timeout: Optional[float] = 600.0

    def _run(self, args: list) -> str:
        argv = _argv(self.command) + args
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=self.timeout)
        except (OSError, subprocess.TimeoutExpired) as e:
            raise AdapterError(f"adapter {argv[0]!r} failed to run: {e}") from e
        if proc.returncode != 0:
            raise AdapterError(f"adapter {args[0]} exited {proc.returncode}: {proc.stderr.strip()[-500:]}")
        return proc.stdout

    def embed(self, x: ImageBuffer, key: WatermarkKey) -> ImageBuffer:
        with tempfile.TemporaryDirectory() as d:
            d = Path(d)
            save_png(x, d / "in.png")
            (d / "key.json").write_text(key.to_json())
            self._run(["embed", "--in", str(d / "in.png"), "--key", str(d / "key.json"), "--out", str(d / "out.png")])
            if not (d / "out.png").exists():
                raise AdapterError("adapter embed produced no output image")
            return load_png(d / "out.png", x.source_id)

    def detect(self, x: ImageBuffer, key: WatermarkKey):
        with tempfile.TemporaryDirectory() as d:
            d = Path(d)
            save_png(x, d / "in.png")
            (d / "key.json").write_text(key.to_json())
            out = self._run(["detect", "--in", str(d / "in.png"), "--key", str(d / "key.json")])
        try:
            res = json.loads(out.strip().splitlines()[-1])
            stat = float(res["statistic"])
        except (ValueError, KeyError, IndexError) as e:
            raise AdapterError(f"adapter detect output is not {{statistic, decoded}} JSON: {out[:200]!r}") from e
        decoded = res.get("decoded")
        if decoded is not None:
            decoded = np.array([int(c) for c in decoded], dtype=np.uint8)
        return stat, decoded

    def attack(self, x: ImageBuffer, params: dict) -> ImageBuffer:
        with tempfile.TemporaryDirectory() as d:
            d = Path(d)
            save_png(x, d / "in.png")
            (d / "params.json").write_text(json.dumps(params))
            self._run(["attack", "--in", str(d / "in.png"), "--out", str(d / "out.png"),
                       "--params", str(d / "params.json")])
            if not (d / "out.png").exists():
                raise AdapterError("adapter attack produced no output image")
            return load_png(d / "out.png", x.source_id)


def adapter_for(key: WatermarkKey) -> ExternalAdapter:
    cmd = key.extra.get("command")
    if not cmd:
        raise AdapterError("external key has no 'command' in extra")
    return ExternalAdapter(cmd)
