"""Command-line interface.  Every command prints a JSON summary on success."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import mesh as M
from . import nn, oracle, resample
from . import sphereops as S
from . import tensor as T


def _emit(obj) -> int:
    print(json.dumps(obj, indent=1))
    return 0


def _read_equirect(path: Path) -> np.ndarray:
    if path.suffix == ".ten":
        return T.load_tensor(path)
    return resample.load_image(path)


def cmd_mesh_info(args) -> int:
    m = M.get_mesh(args.level)
    return _emit({"level": m.r, "vertices": m.n_vertices, "faces": M.face_count(m.r),
                  "edges": M.edge_count(m.r), "components": 5, "component_shape": list(m.component_shape)})


def cmd_mesh_alpha(args) -> int:
    al = M.get_alpha(args.level).as_float32()
    T.save_tensor(args.out, al)
    return _emit({"level": args.level, "out": str(args.out), "shape": list(al.shape),
                  "min": float(al.min()), "max": float(al.max())})


def cmd_to_sphere(args) -> int:
    img = _read_equirect(args.input)
    x = resample.equirect_to_sphere(img, args.level, args.mode)
    S.save_sphere(args.out, x)
    return _emit({"level": x.r, "channels": x.channels, "mode": args.mode, "out": str(args.out)})


def cmd_to_equirect(args) -> int:
    x = S.load_sphere(args.input)
    if args.level is not None and args.level != x.r:
        raise ValueError(f"input is level {x.r}, expected {args.level}")
    h = args.height or resample.equirect_size(x.r)[0]
    img = resample.sphere_to_equirect(x, h, args.mode)
    if args.out.suffix == ".ten":
        T.save_tensor(args.out, img)
    else:
        pix = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
        resample.save_image(args.out, pix[0] if pix.shape[0] == 1 else pix[:3].transpose(1, 2, 0))
    return _emit({"level": x.r, "height": h, "width": 2 * h, "channels": x.channels, "out": str(args.out)})


def cmd_export(args) -> int:
    x = S.load_sphere(args.input)
    img = resample.export_unfolded(x, args.out, args.channel, args.labels)
    return _emit({"level": x.r, "out": str(args.out), "shape": list(img.shape)})


def _spec(args, level=None) -> nn.NetworkSpec:
    return nn.build(args.arch, base=args.base, in_ch=args.in_ch, out_ch=args.out_ch, level=level)


def cmd_net_params(args) -> int:
    spec = _spec(args)
    return _emit({"arch": spec.name, "hex_storage": spec.hex_storage,
                  "layers": nn.param_audit(spec), "total": nn.count_params(spec)})


def cmd_net_init(args) -> int:
    spec = _spec(args)
    store = nn.init_weights(spec, args.seed)
    nn.save_weights(store, args.out, spec)
    return _emit({"arch": spec.name, "out": str(args.out), "params": nn.count_params(spec)})


def cmd_net_forward(args) -> int:
    x = S.load_sphere(args.input)
    spec = _spec(args, level=x.r)
    store, manifest = nn.load_weights(args.weights)
    if manifest.get("network", spec.name) != spec.name:
        raise ValueError(f"weights were saved for {manifest['network']}, not {spec.name}")
    store.validate(spec)
    t0 = time.perf_counter()
    y = nn.forward(spec, store, x)
    dt = time.perf_counter() - t0
    if isinstance(y, S.SphereTensor):
        S.save_sphere(args.out, y)
        info = {"level": y.r, "channels": y.channels}
    else:
        T.save_tensor(args.out, y)
        info = {"logits": [float(v) for v in y]}
    return _emit({"arch": spec.name, "out": str(args.out), "seconds": round(dt, 3), **info})


def cmd_net_transfer(args) -> int:
    store, manifest = nn.load_weights(args.inp)
    storage = int(manifest.get("hex_storage", 9))
    out = nn.transfer_store(store, storage)
    converted = [n for n in store.arrays if store.roles[n] == "hex" and store.arrays[n].shape[-2:] == (3, 3)]
    d = Path(args.out)
    nn.save_weights(out, d)
    m = json.loads((d / "manifest.json").read_text())
    m.update({k: v for k, v in manifest.items() if k not in m})
    (d / "manifest.json").write_text(json.dumps(m, indent=1))
    return _emit({"in": str(args.inp), "out": str(args.out), "converted": len(converted)})


def oracle_check(level: int, seed: int, c_in: int = 3, c_out: int = 4) -> dict:
    """Compare the grid operators with the per-vertex references."""
    rng = np.random.default_rng(seed)
    m = M.get_mesh(level)
    W = m.W
    x = S.SphereTensor(level, rng.standard_normal((5, c_in, 2 * W, W)).astype(np.float32))
    w = rng.standard_normal((c_out, c_in, 7)).astype(np.float32)
    b = rng.standard_normal(c_out).astype(np.float32)
    sig = oracle.from_sphere(x)
    ref = oracle.graph_hexconv_ref(sig, m, w, b).values[2:]
    got = oracle.from_sphere(S.hexconv(x, S.HexKernelBank(w, b))).values[2:]
    keep = ~oracle.touches_pole(m)
    conv_rel = float(np.max(np.abs(got - ref)[keep]) / np.max(np.abs(ref[keep])))
    eq1 = oracle.graph_eq1_ref(sig, m, w, b).values[2:]
    out = {"level": level, "seed": seed, "hexconv_max_rel_dev": conv_rel,
           "per_tap_interpolation_max_dev": float(np.max(np.abs(eq1 - ref)[keep]))}
    if level >= 1:
        coarse = M.get_mesh(level - 1)
        p_ref = oracle.graph_pool_ref(sig, m, coarse).values[2:]
        p_got = oracle.from_sphere(S.sphere_pool(x)).values[2:]
        out["pool_max_dev"] = float(np.max(np.abs(p_ref - p_got)))
    if level + 1 <= M.MAX_LEVEL and level <= 5:
        fine = M.get_mesh(level + 1)
        u_ref = oracle.graph_upsample_ref(sig, m, fine).values[2:]
        u_got = oracle.from_sphere(S.sphere_upsample(x)).values[2:]
        k2 = ~oracle.upsample_touches_pole(m, fine)
        out["upsample_max_dev"] = float(np.max(np.abs(u_ref - u_got)[k2]))
    return out


def cmd_oracle_check(args) -> int:
    res = oracle_check(args.level, args.seed)
    res["passed"] = res["hexconv_max_rel_dev"] <= 1e-5 and res.get("pool_max_dev", 0) <= 1e-5 \
        and res.get("upsample_max_dev", 0) <= 1e-5
    _emit(res)
    return 0 if res["passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hexsphere", description=__doc__)
    sub = p.add_subparsers(dest="group", required=True)

    g = sub.add_parser("mesh").add_subparsers(dest="cmd", required=True)
    c = g.add_parser("info")
    c.add_argument("--level", type=int, required=True)
    c.set_defaults(fn=cmd_mesh_info)
    c = g.add_parser("alpha")
    c.add_argument("--level", type=int, required=True)
    c.add_argument("--out", type=Path, required=True)
    c.set_defaults(fn=cmd_mesh_alpha)

    g = sub.add_parser("resample").add_subparsers(dest="cmd", required=True)
    c = g.add_parser("to-sphere")
    c.add_argument("--level", type=int, required=True)
    c.add_argument("--mode", choices=["bilinear", "nearest"], default="bilinear")
    c.add_argument("--input", type=Path, required=True)
    c.add_argument("--out", type=Path, required=True)
    c.set_defaults(fn=cmd_to_sphere)
    c = g.add_parser("to-equirect")
    c.add_argument("--level", type=int, help="expected level of the input (checked)")
    c.add_argument("--mode", choices=["bilinear", "nearest"], default="bilinear")
    c.add_argument("--height", type=int)
    c.add_argument("--input", type=Path, required=True)
    c.add_argument("--out", type=Path, required=True)
    c.set_defaults(fn=cmd_to_equirect)

    c = sub.add_parser("export")
    c.add_argument("--input", type=Path, required=True)
    c.add_argument("--out", type=Path, required=True)
    c.add_argument("--channel", type=int)
    c.add_argument("--labels", action="store_true")
    c.set_defaults(fn=cmd_export)

    g = sub.add_parser("net").add_subparsers(dest="cmd", required=True)
    for name, fn in (("params", cmd_net_params), ("init", cmd_net_init), ("forward", cmd_net_forward)):
        c = g.add_parser(name)
        c.add_argument("--arch", choices=["hexrunet-c", "hexrunet", "hexunet"], required=True)
        c.add_argument("--base", type=int, default=16, choices=[8, 16, 32])
        c.add_argument("--in-ch", type=int)
        c.add_argument("--out-ch", type=int)
        c.set_defaults(fn=fn)
        if name == "init":
            c.add_argument("--out", type=Path, required=True)
            c.add_argument("--seed", type=int, default=0)
        if name == "forward":
            c.add_argument("--weights", type=Path, required=True)
            c.add_argument("--input", type=Path, required=True)
            c.add_argument("--out", type=Path, required=True)
    c = g.add_parser("transfer")
    c.add_argument("--in", dest="inp", type=Path, required=True)
    c.add_argument("--out", type=Path, required=True)
    c.set_defaults(fn=cmd_net_transfer)

    g = sub.add_parser("oracle").add_subparsers(dest="cmd", required=True)
    c = g.add_parser("check")
    c.add_argument("--level", type=int, required=True)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(fn=cmd_oracle_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, KeyError, IndexError, OSError, TypeError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
