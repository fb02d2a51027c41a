"""Reference implementation of the executable-adapter protocol.

Run as ``python -m wmbench.adapters.reference <embed|detect|attack> ...``.
Watermarking delegates to the built-in DwtDct scheme using the key's bits,
base seed and ``extra.inner_strength``; attacks delegate to the built-in
signal attacks (``params.name`` selects which). It exists so the external
plumbing can be exercised end to end and as a template for wrapping
third-party code.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..attack.baselines import AttackSpec, apply_signal_attack
from ..core import derive_stream, load_png, save_png
from ..watermarks.bitstream import DEFAULT_STRENGTH, bit_accuracy, decode_bits, embed_dwt_dct
from ..watermarks.keys import WatermarkKey


def _inner(key: WatermarkKey) -> WatermarkKey:
    st = float(key.extra.get("inner_strength", DEFAULT_STRENGTH["dwt_dct"]))
    return WatermarkKey("dwt_dct", st, key.base_seed, bits=key.bits)


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="wmbench-reference-adapter")
    sub = p.add_subparsers(dest="op", required=True)
    e = sub.add_parser("embed")
    e.add_argument("--in", dest="inp", required=True)
    e.add_argument("--key", required=True)
    e.add_argument("--out", required=True)
    d = sub.add_parser("detect")
    d.add_argument("--in", dest="inp", required=True)
    d.add_argument("--key", required=True)
    a = sub.add_parser("attack")
    a.add_argument("--in", dest="inp", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--params", required=True)
    args = p.parse_args(argv)

    x = load_png(args.inp)
    if args.op == "attack":
        params = json.loads(Path(args.params).read_text())
        name = params.pop("name", "gaussian_blur")
        spec = AttackSpec.default(name, **params)
        save_png(apply_signal_attack(x, spec, derive_stream(int(params.get("seed", 0)), "adapter:attack")), args.out)
        return 0
    key = _inner(WatermarkKey.from_json(Path(args.key).read_text()))
    if args.op == "embed":
        save_png(embed_dwt_dct(x, key), args.out)
        return 0
    decoded = decode_bits(x, key)
    print(json.dumps({"statistic": bit_accuracy(decoded, key.bits), "decoded": "".join(map(str, decoded))}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
