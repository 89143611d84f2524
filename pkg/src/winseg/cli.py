"""Command-line client for the scoring service.

Every subcommand (except ``serve``) builds a request and sends it either
to a remote server (``--server`` / WINSEG_SERVER) or to an in-process
instance of the app.  Results print as JSON on stdout; runtime failures
print a machine-readable error object on stderr and exit 1, usage errors
exit 2.
"""

from __future__ import annotations

import json
import os
import sys

import click

from .service.client import ServiceClient


def _parse_ints(text: str):
    return [int(part) for part in str(text).split(",") if part != ""]


def _client(ctx) -> ServiceClient:
    return ServiceClient(server=ctx.obj.get("server"))


def _emit(payload: dict) -> None:
    click.echo(json.dumps(payload, indent=2, sort_keys=True))


def _common_payload(model, obj, lexicon, scales, tau, multicrop, fusion_weight):
    payload = {
        "tau": tau,
        "multicrop": multicrop,
        "fusion_weight": fusion_weight,
    }
    if model:
        payload["model"] = model
    if obj:
        payload["object_label"] = obj
    if lexicon:
        payload["lexicon_path"] = lexicon
    if scales:
        payload["kernels"] = _parse_ints(scales)
    return payload


model_option = click.option(
    "--model", default=lambda: os.environ.get("WINSEG_MODEL_DIR"),
    help="Model directory or 'reference:<seed>' (default: $WINSEG_MODEL_DIR or reference:0).")
object_option = click.option("--object", "obj", default=None, help="Object label for prompts.")
lexicon_option = click.option("--lexicon", default=None, type=click.Path(exists=True),
                              help="JSON file with states/templates.")
scales_option = click.option("--scales", default=None, help="Window kernels, e.g. '2,3'.")
tau_option = click.option("--tau", default=0.01, show_default=True, help="Softmax temperature.")
multicrop_option = click.option("--multicrop", default="single", show_default=True,
                                type=click.Choice(["single", "five_crop"]))
fusion_option = click.option("--fusion-weight", default=0.5, show_default=True,
                             help="Weight of the language map in segmentation fusion.")


@click.group()
@click.option("--server", default=lambda: os.environ.get("WINSEG_SERVER"),
              help="Base URL of a running service; default runs in process.")
@click.pass_context
def main(ctx, server):
    """Zero-/few-shot anomaly classification and segmentation."""
    ctx.ensure_object(dict)
    ctx.obj["server"] = server


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run("winseg.service.app:app", host=host, port=port)


@main.command()
@object_option
@lexicon_option
@click.option("--out", default=None, type=click.Path(), help="Write the lists to a JSON file.")
@click.option("--json", "as_json", is_flag=True, help="Emit JSON instead of one prompt per line.")
@click.pass_context
def prompts(ctx, obj, lexicon, out, as_json):
    """Print the composed prompt lists, one prompt per line (normal first)."""
    payload = {"object_label": obj or "object"}
    if lexicon:
        payload["lexicon_path"] = lexicon
    result = _client(ctx).post("/prompts", payload)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            json.dump(result, fh, indent=2)
    if as_json:
        _emit(result)
    else:
        for prompt in (*result["normal"], *result["anomaly"]):
            click.echo(prompt)


@main.command()
@model_option
@object_option
@lexicon_option
@scales_option
@tau_option
@multicrop_option
@fusion_option
@click.option("--image", required=True, type=click.Path(exists=True))
@click.option("--heatmap", default=None, type=click.Path(), help="Write a 16-bit PNG heatmap.")
@click.option("--no-map", is_flag=True, help="Skip the segmentation map (classification only).")
@click.pass_context
def score(ctx, model, obj, lexicon, scales, tau, multicrop, fusion_weight,
          image, heatmap, no_map):
    """Zero-shot score (and heatmap) for one image."""
    payload = _common_payload(model, obj, lexicon, scales, tau, multicrop, fusion_weight)
    payload.update({
        "image_path": os.path.abspath(image),
        "with_map": not no_map,
    })
    if heatmap:
        payload["heatmap_path"] = os.path.abspath(heatmap)
    _emit(_client(ctx).post("/score", payload))


@main.command()
@model_option
@object_option
@lexicon_option
@scales_option
@tau_option
@multicrop_option
@fusion_option
@click.option("--refs", default=None, help="Comma-separated reference image paths.")
@click.option("--root", default=None, type=click.Path(), help="Dataset root for sampling refs.")
@click.option("--dataset-layout", default="mvtec", show_default=True,
              type=click.Choice(["mvtec", "visa"]))
@click.option("--category", default=None, help="Category to sample references from.")
@click.option("--k", default=1, show_default=True, help="Number of reference images.")
@click.option("--seed", default=0, show_default=True, help="Reference sampling seed.")
@click.option("--memory", "memory_path", default=None, type=click.Path(),
              help="Load a previously saved memory instead of building one.")
@click.option("--save-memory", default=None, type=click.Path(),
              help="Persist the built memory to this path.")
@click.option("--image", "images", multiple=True, type=click.Path(exists=True),
              help="Query image; repeatable.")
@click.option("--heatmap-dir", default=None, type=click.Path(),
              help="Write one 16-bit PNG heatmap per query here.")
@click.option("--no-language", is_flag=True, help="Memory-only predictions.")
@click.pass_context
def fewshot(ctx, model, obj, lexicon, scales, tau, multicrop, fusion_weight,
            refs, root, dataset_layout, category, k, seed, memory_path,
            save_memory, images, heatmap_dir, no_language):
    """Build or load a reference memory, then score query images."""
    client = _client(ctx)
    common = _common_payload(model, obj, lexicon, scales, tau, multicrop, fusion_weight)
    common["language"] = not no_language
    if memory_path:
        built = client.post("/memory/load", {"path": os.path.abspath(memory_path)})
    else:
        payload = dict(common)
        if refs:
            payload["ref_paths"] = [os.path.abspath(p) for p in refs.split(",")]
        else:
            if not root or not category:
                raise click.UsageError("fewshot needs --refs, --memory, or --root and --category")
            payload.update({"root": os.path.abspath(root), "layout": dataset_layout,
                            "category": category, "k": k, "seed": seed})
        if save_memory:
            payload["save_path"] = os.path.abspath(save_memory)
        built = client.post("/memory/build", payload)
    queries = []
    if heatmap_dir:
        os.makedirs(heatmap_dir, exist_ok=True)
    for image in images:
        payload = dict(common)
        payload.update({"image_path": os.path.abspath(image),
                        "memory_id": built["memory_id"]})
        if heatmap_dir:
            stem = os.path.splitext(os.path.basename(image))[0]
            payload["heatmap_path"] = os.path.abspath(
                os.path.join(heatmap_dir, f"{stem}_heatmap.png"))
        result = client.post("/score", payload)
        result["image"] = image
        queries.append(result)
    _emit({"memory": built, "queries": queries})


@main.command(name="eval")
@model_option
@object_option
@lexicon_option
@scales_option
@tau_option
@multicrop_option
@fusion_option
@click.option("--root", required=True, type=click.Path(exists=True))
@click.option("--dataset-layout", default="mvtec", show_default=True,
              type=click.Choice(["mvtec", "visa"]))
@click.option("--shots", default="0", show_default=True,
              help="Comma-separated shot counts, e.g. '0,1,2,4'.")
@click.option("--seeds", default="0,1,2,3,4", show_default=True,
              help="Comma-separated seeds for reference sampling.")
@click.option("--categories", default=None, help="Subset of categories, comma-separated.")
@click.option("--out", default=None, type=click.Path(), help="Directory for report CSV/JSON.")
@click.option("--jobs", default=1, show_default=True, help="Parallel category workers.")
@click.option("--no-language", is_flag=True, help="Memory-only predictions (shots > 0).")
@click.option("--memory-scales", default=None,
              help="Association components, e.g. 'patch,window:3'.")
@click.option("--per-image-pixel-metrics", is_flag=True,
              help="Average pixel metrics per image instead of pooling pixels.")
@click.pass_context
def evaluate(ctx, model, obj, lexicon, scales, tau, multicrop, fusion_weight,
             root, dataset_layout, shots, seeds, categories, out, jobs,
             no_language, memory_scales, per_image_pixel_metrics):
    """Evaluate a dataset at the given shot counts over the seed list."""
    payload = _common_payload(model, obj, lexicon, scales, tau, multicrop, fusion_weight)
    payload.update({
        "root": os.path.abspath(root),
        "layout": dataset_layout,
        "shots": _parse_ints(shots),
        "seeds": _parse_ints(seeds),
        "jobs": jobs,
        "language": not no_language,
        "per_image_pixel_metrics": per_image_pixel_metrics,
    })
    if categories:
        payload["categories"] = categories.split(",")
    if out:
        payload["out_dir"] = os.path.abspath(out)
    if memory_scales:
        payload["memory_scales"] = memory_scales.split(",")
    _emit(_client(ctx).post("/eval", payload))


@main.command()
@model_option
@object_option
@click.option("--configs", default=None,
              help="Comma-separated ablation names; default runs all.")
@click.option("--images", "n_images", default=3, show_default=True)
@click.option("--repeats", default=2, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.pass_context
def bench(ctx, model, obj, configs, n_images, repeats, seed):
    """Latency and token-work comparison of the segmentation ablations."""
    payload = {"n_images": n_images, "repeats": repeats, "seed": seed}
    if model:
        payload["model"] = model
    if obj:
        payload["object_label"] = obj
    if configs:
        payload["configs"] = configs.split(",")
    _emit(_client(ctx).post("/bench", payload))


@main.command()
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--category", default="widget", show_default=True)
def synth(out, seed, category):
    """Generate the synthetic inspection dataset used by the test suite."""
    from .synthetic import generate_toy_dataset

    generate_toy_dataset(out, category=category, seed=seed)
    _emit({"root": os.path.abspath(out), "category": category})


def run() -> int:
    try:
        main(standalone_mode=False)
        return 0
    except click.UsageError as exc:
        exc.show()
        return 2
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        return 1
    except Exception as exc:  # noqa: BLE001 - boundary: everything becomes JSON
        error = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        click.echo(json.dumps(error), err=True)
        return 1


if __name__ == "__main__":
    sys.exit(run())
