"""Command-line surface.

Subcommands: rig, train, eval, deform, serve.  Exit codes: 0 success,
2 validation error (bad arguments or malformed inputs), 1 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import BANDWIDTH_MAX, BANDWIDTH_MIN, RunConfig
from .errors import RigforgeError
from .mesh import load_and_normalize, write_obj

logger = logging.getLogger("rigforge")


def _add_seed(p):
    p.add_argument("--seed", type=int, default=0, help="seed for all randomness")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rigforge",
                                     description="automatic character rigging")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rig", help="predict a skeleton and skinning for a mesh")
    p.add_argument("mesh", help="input OBJ file")
    p.add_argument("-o", "--output", required=True, help="output rig file")
    p.add_argument("--ckpt", help="checkpoint file (random init when omitted)")
    p.add_argument("--bandwidth", type=float,
                   help=f"clustering bandwidth override, in [{BANDWIDTH_MIN}, {BANDWIDTH_MAX}]")
    p.add_argument("--no-symmetry", action="store_true",
                   help="skip the bilateral symmetrization of the displaced cloud")
    p.add_argument("--ms-eps", type=float, default=1e-3,
                   help="mean-shift convergence threshold")
    p.add_argument("--dump-bones", help="also write the pair probability CSV here")
    _add_seed(p)

    p = sub.add_parser("train", help="train one stage on a dataset directory")
    p.add_argument("stage", choices=["joints", "conn", "skin"])
    p.add_argument("--data", required=True, help="directory of <name>.obj + <name>.rig pairs")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("-o", "--output", required=True, help="checkpoint to write")
    p.add_argument("--init", help="checkpoint to start from")
    _add_seed(p)

    p = sub.add_parser("eval", help="score a predicted rig against a reference")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--mesh", required=True)
    p.add_argument("--csv", action="store_true", help="emit one CSV row instead of JSON")
    _add_seed(p)

    p = sub.add_parser("deform", help="pose a rigged mesh with linear blend skinning")
    p.add_argument("--mesh", required=True)
    p.add_argument("--rig", required=True)
    p.add_argument("--pose", required=True, help="pose JSON file")
    p.add_argument("-o", "--output", required=True, help="deformed OBJ to write")
    _add_seed(p)

    p = sub.add_parser("serve", help="run the interactive rigging service")
    p.add_argument("--port", type=int, default=8437)
    p.add_argument("--ckpt", help="checkpoint file")
    p.add_argument("--static", help="directory of viewer files to serve at /")
    _add_seed(p)
    return parser


def cmd_rig(args) -> int:
    from .connectivity import prob_matrix_csv, score_connectivity
    from .gmedge import edge_arrays
    from .pipeline import RigPipeline
    from .rigfile import write_rig

    if args.bandwidth is not None and not (BANDWIDTH_MIN <= args.bandwidth <= BANDWIDTH_MAX):
        print(f"error: bandwidth {args.bandwidth} outside valid range "
              f"[{BANDWIDTH_MIN}, {BANDWIDTH_MAX}]", file=sys.stderr)
        return 2
    cfg = RunConfig(seed=args.seed, ms_eps=args.ms_eps,
                    use_symmetry=not args.no_symmetry).validate()
    pipeline = RigPipeline.from_checkpoint(args.ckpt, cfg, seed=args.seed)
    mesh = load_and_normalize(Path(args.mesh).read_bytes())
    ctx = pipeline.precompute(mesh)
    skeleton = pipeline.predict_skeleton(ctx, bandwidth=args.bandwidth)
    weights = pipeline.predict_skin(ctx, skeleton) if skeleton.n_joints > 1 else None
    from .rigfile import rig_from_prediction

    rig = rig_from_prediction(skeleton, weights)
    Path(args.output).write_text(write_rig(rig))
    if args.dump_bones:
        from .joints import joints_from_cloud

        scores = score_connectivity(pipeline.store, ctx.mesh.vertices,
                                    edge_arrays(ctx.graph), skeleton.joints,
                                    ctx.grid, ctx.plane)
        Path(args.dump_bones).write_text(prob_matrix_csv(scores.prob_matrix))
    print(f"wrote {args.output}: {skeleton.n_joints} joints, "
          f"{len(skeleton.bones())} bones")
    return 0


def cmd_train(args) -> int:
    from .assets import load_dataset
    from .params import ParamStore
    from .pipeline import init_all_params, prepare_characters, train_stage

    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    cfg.seed = args.seed
    cfg.validate()
    dataset = load_dataset(args.data)
    if not dataset:
        print(f"error: no <name>.obj + <name>.rig pairs under {args.data}", file=sys.stderr)
        return 2
    store = ParamStore.load(args.init) if args.init else init_all_params(args.seed)
    chars = prepare_characters(dataset, cfg)
    train_stage(args.stage, chars, store, cfg, checkpoint_path=args.output)
    store.save(args.output)
    print(f"wrote checkpoint {args.output}")
    return 0


def cmd_eval(args) -> int:
    from .metrics import skeleton_report, skin_report
    from .rigfile import parse_rig

    mesh = load_and_normalize(Path(args.mesh).read_bytes())
    pred = parse_rig(Path(args.pred).read_text())
    ref = parse_rig(Path(args.ref).read_text())
    report = skeleton_report(pred.skeleton(), ref.skeleton(), mesh)
    out = {"skeleton": report.to_dict()}
    if pred.skin and ref.skin:
        pw = pred.dense_weights(mesh.n_vertices)
        rw = ref.dense_weights(mesh.n_vertices)
        if pw.shape == rw.shape and pred.bone_names() == ref.bone_names():
            out["skin"] = skin_report(pw, rw, ref.skeleton(), mesh, seed=args.seed).to_dict()
    if args.csv:
        keys, vals = [], []
        for group, rep in out.items():
            for k, v in rep.items():
                keys.append(f"{group}_{k}")
                vals.append(str(v))
        print(",".join(keys))
        print(",".join(vals))
    else:
        print(json.dumps(out, indent=2))
    return 0


def cmd_deform(args) -> int:
    from .rigfile import parse_rig
    from .skinning import Pose, lbs_deform

    mesh = load_and_normalize(Path(args.mesh).read_bytes())
    rig = parse_rig(Path(args.rig).read_text())
    skeleton = rig.skeleton()
    pose_spec = json.loads(Path(args.pose).read_text())
    quats = np.zeros((skeleton.n_joints, 4))
    quats[:, 3] = 1.0
    for name, q in pose_spec.get("rotations", {}).items():
        if name not in rig.joint_names:
            print(f"error: pose references unknown joint {name!r}", file=sys.stderr)
            return 2
        quats[rig.joint_names.index(name)] = np.asarray(q, dtype=np.float64)
    norms = np.linalg.norm(quats, axis=1, keepdims=True)
    quats = quats / norms
    pose = Pose(quats, np.asarray(pose_spec.get("translation", [0, 0, 0]), dtype=np.float64))
    weights = rig.dense_weights(mesh.n_vertices)
    rows = weights.sum(axis=1)
    if (rows <= 0).any():
        print("error: rig leaves some vertices without skin weights", file=sys.stderr)
        return 2
    deformed = lbs_deform(mesh, skeleton, weights / rows[:, None], pose)
    out = write_obj(type(mesh)(deformed, mesh.triangles))
    Path(args.output).write_text(out)
    print(f"wrote {args.output}")
    return 0


def cmd_serve(args) -> int:
    from .pipeline import RigPipeline
    from .server import RigServer

    pipeline = RigPipeline.from_checkpoint(args.ckpt, seed=args.seed)
    server = RigServer(pipeline, static_dir=args.static)
    print(f"serving on http://127.0.0.1:{args.port}")
    server.serve_forever(args.port)
    return 0


COMMANDS = {
    "rig": cmd_rig,
    "train": cmd_train,
    "eval": cmd_eval,
    "deform": cmd_deform,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except RigforgeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # internal failure
        logger.exception("internal error: %s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
