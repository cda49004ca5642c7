"""Command-line entry point: ``humanfield <subcommand> [--config PATH] [--seed N] [--out DIR]``.

Exit status is 0 on success, 2 on usage or configuration errors and 1 on
any other failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import default_config, load_config, save_config, validate_config
from .errors import ConfigError
from .evaluate import analytic_mesh, evaluate, predicted_mesh, render_views
from .io import load_checkpoint, load_mesh, save_depth, save_image, save_mesh, save_rig, save_vertex_set
from .metrics import EvalReport, surface_metrics
from .scenes import make_synthetic_scene, normals_to_rgb, render_reference
from .training import SceneData, build_scene_data, finetune_sds, make_backend, model_from_checkpoint, train

log = logging.getLogger("humanfield")


def _config(args) -> dict:
    cfg = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg["seed"] = int(args.seed)
    return validate_config(cfg)


def _scene_data(args, cfg) -> SceneData:
    """Scene from ``--scene DIR`` (written by make-scene) or from the config."""
    s = cfg["scene"]
    params = {"kind": s["kind"], "seed": s["seed"], "n_vertices": s["n_vertices"], "vertex_jitter": s["vertex_jitter"]}
    if getattr(args, "scene", None):
        path = Path(args.scene) / "scene.json"
        if not path.exists():
            raise FileNotFoundError(2, "no scene description", str(path))
        params.update(json.loads(path.read_text())["params"])
        cfg["scene"].update({k: params[k] for k in ("kind", "seed", "n_vertices", "vertex_jitter")})
    scene = make_synthetic_scene(params["kind"], params["seed"], n_vertices=params["n_vertices"],
                                 vertex_jitter=params["vertex_jitter"])
    return build_scene_data(scene, cfg)


def _write_jsonl(path: Path, records) -> None:
    with open(path, "a") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def _checkpoint_cfg(args, payload) -> dict:
    cfg = copy.deepcopy(payload["config"])
    if args.config:
        cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = int(args.seed)
    return validate_config(cfg)


def cmd_make_scene(args, out: Path) -> int:
    cfg = _config(args)
    if args.kind:
        cfg["scene"]["kind"] = args.kind
    if args.seed is not None:
        cfg["scene"]["seed"] = int(args.seed)
    cfg = validate_config(cfg)
    data = _scene_data(args, cfg)
    scene = data.scene
    s = cfg["scene"]
    params = {"kind": s["kind"], "seed": s["seed"], "n_vertices": s["n_vertices"], "vertex_jitter": s["vertex_jitter"]}
    (out / "scene.json").write_text(json.dumps({"params": params, "scene": scene.to_dict()}, indent=1))
    save_config(out / "config.json", cfg)
    save_vertex_set(out / "vertices.obj", scene.vertices, scene.part_labels)
    for name, cams in (("source", data.source.cameras), ("target", data.target_cameras), ("eval", data.eval_cameras)):
        save_rig(out / f"rig_{name}.json", cams)
        for i, cam in enumerate(cams):
            ref = render_reference(scene, cam)
            save_image(out / f"{name}_{i:02d}.png", ref.image)
            save_depth(out / f"{name}_{i:02d}_depth.png", ref.depth, ref.mask)
            save_image(out / f"{name}_{i:02d}_normal.png", np.where(ref.mask[..., None], normals_to_rgb(ref.normals, cam), 0.5))
    save_mesh(out / "analytic_mesh.obj", analytic_mesh(scene, cfg["eval"]["gt_mesh_resolution"]))
    print(json.dumps({"scene": str(out), "kind": s["kind"], "seed": s["seed"], "bbox_diagonal": scene.diagonal}))
    return 0


def cmd_train(args, out: Path) -> int:
    cfg = _config(args)
    if args.iterations is not None:
        cfg["train"]["iterations"] = args.iterations
    data = _scene_data(args, cfg)
    save_config(out / "config.json", cfg)
    _, reports = train([data], cfg, out_dir=out, resume=args.resume)
    if reports:
        print(json.dumps(reports[-1].to_dict(), sort_keys=True))
    return 0


def _load_model(args):
    payload = load_checkpoint(args.checkpoint)
    cfg = _checkpoint_cfg(args, payload)
    return payload, cfg, model_from_checkpoint(payload)


def cmd_infer(args, out: Path) -> int:
    _, cfg, model = _load_model(args)
    data = _scene_data(args, cfg)
    for i, maps in enumerate(render_views(model, data, data.eval_cameras, cfg)):
        save_image(out / f"novel_{i:02d}.png", maps["color"])
    print(json.dumps({"views": len(data.eval_cameras), "out": str(out)}))
    return 0


def cmd_render(args, out: Path) -> int:
    _, cfg, model = _load_model(args)
    data = _scene_data(args, cfg)
    for i, maps in enumerate(render_views(model, data, data.eval_cameras, cfg)):
        save_image(out / f"color_{i:02d}.png", maps["color"])
        save_image(out / f"normal_{i:02d}.png", maps["normal"])
        save_depth(out / f"depth_{i:02d}.png", maps["depth"], maps["opacity"] > 0.5)
    print(json.dumps({"views": len(data.eval_cameras), "out": str(out)}))
    return 0


def cmd_refine(args, out: Path) -> int:
    payload, cfg, _ = _load_model(args)
    if args.iterations is not None:
        cfg["finetune"]["iterations"] = args.iterations
    data = _scene_data(args, cfg)
    backend = make_backend(cfg["finetune"]["backend"], cfg)
    _, reports = finetune_sds(payload, data, backend, cfg, out_path=out / "refined.pt")
    _write_jsonl(out / "refine_losses.jsonl", [r.to_dict() for r in reports])
    if reports:
        print(json.dumps(reports[-1].to_dict(), sort_keys=True))
    return 0


def cmd_extract_mesh(args, out: Path) -> int:
    _, cfg, model = _load_model(args)
    data = _scene_data(args, cfg)
    mesh = predicted_mesh(model, data, args.resolution or cfg["eval"]["mesh_resolution"])
    save_mesh(out / "mesh.obj", mesh)
    print(json.dumps({"vertices": len(mesh.vertices), "faces": len(mesh.faces), "out": str(out / "mesh.obj")}))
    return 0


def cmd_eval(args, out: Path) -> int:
    if args.mesh:
        cfg = _config(args)
        data = _scene_data(args, cfg)
        gt_path = Path(args.scene) / "analytic_mesh.obj" if args.scene else None
        gt = load_mesh(gt_path) if gt_path and gt_path.exists() else analytic_mesh(data.scene, cfg["eval"]["gt_mesh_resolution"])
        cd, nc = surface_metrics(load_mesh(args.mesh), gt, cfg["eval"]["n_samples"], cfg["seed"])
        report = EvalReport(cd, nc, float("nan"), float("nan"),
                            per_scene={"scene": {"chamfer": cd, "normal_consistency": nc,
                                                 "bbox_diagonal": data.scene.diagonal}})
    else:
        if not args.checkpoint:
            raise ConfigError("eval needs --checkpoint or --mesh")
        _, cfg, model = _load_model(args)
        data = _scene_data(args, cfg)
        report, _ = evaluate(model, data, cfg, cfg["seed"])
    _write_jsonl(out / "eval.jsonl", [report.to_dict()])
    print(report.to_json())
    return 0


def cmd_ablate(args, out: Path) -> int:
    cfg = _config(args)
    if args.iterations is not None:
        cfg["train"]["iterations"] = args.iterations
    toggles = {"tokens": not args.no_tokens, "multi_target": not args.no_multi_target, "guidance": not args.no_guidance}
    cfg["model"]["use_tokens"] = toggles["tokens"]
    cfg["train"]["multi_target"] = toggles["multi_target"]
    cfg = validate_config(cfg)
    data = _scene_data(args, cfg)
    save_config(out / "config.json", cfg)
    model, _ = train([data], cfg, out_dir=out)
    if toggles["guidance"] and cfg["finetune"]["iterations"] > 0:
        payload = load_checkpoint(out / "checkpoint.pt")
        model, reports = finetune_sds(payload, data, make_backend(cfg["finetune"]["backend"], cfg), cfg,
                                      out_path=out / "refined.pt")
        _write_jsonl(out / "refine_losses.jsonl", [r.to_dict() for r in reports])
    report, _ = evaluate(model, data, cfg, cfg["seed"])
    record = {"toggles": toggles, **report.to_dict()}
    _write_jsonl(out / "ablation.jsonl", [record])
    print(json.dumps(record, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (partial documents are filled with defaults)")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="humanfield", description="Sparse-view implicit human reconstruction.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("make-scene", parents=[common], help="synthesize a scene and render references")
    p.add_argument("--kind", choices=("sphere", "capsule_person"))
    p.set_defaults(func=cmd_make_scene)

    def scene_arg(p):
        p.add_argument("--scene", help="scene directory written by make-scene")

    def ckpt_arg(p, required=True):
        p.add_argument("--checkpoint", required=required, help="checkpoint written by train or refine")

    p = sub.add_parser("train", parents=[common], help="feed-forward training")
    scene_arg(p)
    p.add_argument("--iterations", type=int)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", parents=[common], help="render novel views from a checkpoint")
    scene_arg(p)
    ckpt_arg(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("refine", parents=[common], help="score-distillation finetuning")
    scene_arg(p)
    ckpt_arg(p)
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("extract-mesh", parents=[common], help="marching cubes on the predicted field")
    scene_arg(p)
    ckpt_arg(p)
    p.add_argument("--resolution", type=int)
    p.set_defaults(func=cmd_extract_mesh)

    p = sub.add_parser("render", parents=[common], help="colour, normal and depth maps")
    scene_arg(p)
    ckpt_arg(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", parents=[common], help="metrics against the analytic scene")
    scene_arg(p)
    ckpt_arg(p, required=False)
    p.add_argument("--mesh", help="evaluate this OBJ instead of a checkpoint")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="train and evaluate with pathways switched off")
    scene_arg(p)
    p.add_argument("--iterations", type=int)
    p.add_argument("--no-tokens", action="store_true", help="zero the fused token features")
    p.add_argument("--no-multi-target", action="store_true", help="one target view per iteration")
    p.add_argument("--no-guidance", action="store_true", help="skip score-distillation refinement")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        return args.func(args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
