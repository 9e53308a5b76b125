"""Command-line client for the inference/explanation service.

The CLI is a thin HTTP client.  Without ``--server`` it mounts the
FastAPI app in-process over an ASGI transport, so local runs need no
running daemon while still exercising the exact service surface.

Exit codes: 0 success, 1 verification failure, 2 usage/IO error.
"""

from __future__ import annotations

import json
import sys

import click
import httpx


class _InProcessClient:
    """Sync facade over the ASGI app; ASGITransport is async-only."""

    def __init__(self):
        from .service.app import create_app
        self._transport = httpx.ASGITransport(app=create_app())

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return None

    def request(self, method: str, path: str, json=None) -> httpx.Response:
        import asyncio

        async def go():
            async with httpx.AsyncClient(transport=self._transport,
                                         base_url="http://convad",
                                         timeout=None) as client:
                return await client.request(method, path, json=json)

        return asyncio.run(go())


def _client(server: str | None):
    if server:
        return httpx.Client(base_url=server, timeout=None)
    return _InProcessClient()


def _call(client: httpx.Client, method: str, path: str, payload=None):
    resp = client.request(method, path, json=payload)
    if resp.status_code >= 400:
        try:
            detail = resp.json().get("detail", resp.text)
        except ValueError:
            detail = resp.text
        click.echo(f"error: {detail}", err=True)
        sys.exit(2)
    return resp.json()


def _load(client: httpx.Client, manifest: str, blob: str) -> str:
    info = _call(client, "POST", "/models",
                 {"manifest_path": manifest, "blob_path": blob})
    return info["model_id"]


@click.group()
@click.option("--server", default=None, metavar="URL",
              help="Remote service URL; defaults to an in-process app.")
@click.pass_context
def main(ctx, server):
    """Occlusion-free CNN inference, explanation, and evaluation."""
    ctx.obj = {"server": server}


@main.command()
@click.argument("manifest", type=click.Path(exists=True))
@click.argument("blob", type=click.Path(exists=True))
@click.argument("image", type=click.Path(exists=True))
@click.option("--mask", type=click.Path(exists=True), default=None,
              help="Occlusion mask (PGM or run-length JSON).")
@click.option("--ad", "use_ad", is_flag=True, help="Masked forward pass.")
@click.option("--occlude", default=None,
              type=click.Choice(["min", "max", "avg", "zero"]),
              help="Occlusion-baseline forward with this replacement policy.")
@click.option("--tau", default=0.0, show_default=True,
              help="Deactivation threshold for --ad.")
@click.option("--top-k", default=5, show_default=True)
@click.option("--json", "as_json", is_flag=True, help="Emit the full score vector.")
@click.pass_context
def infer(ctx, manifest, blob, image, mask, use_ad, occlude, tau, top_k, as_json):
    """Classify IMAGE; plain forward unless --ad or --occlude is given."""
    if use_ad and occlude:
        click.echo("error: --ad and --occlude are mutually exclusive", err=True)
        sys.exit(2)
    mode = "ad" if use_ad else ("occlusion" if occlude else "plain")
    if mode != "plain" and mask is None:
        click.echo(f"error: --mask is required for --{'ad' if use_ad else 'occlude'}",
                   err=True)
        sys.exit(2)
    with _client(ctx.obj["server"]) as client:
        model_id = _load(client, manifest, blob)
        out = _call(client, "POST", f"/models/{model_id}/infer", {
            "image_path": image, "mask_path": mask, "mode": mode,
            "policy": occlude or "zero", "tau": tau, "top_k": top_k})
    if as_json:
        click.echo(json.dumps(out))
    else:
        for p in out["predictions"]:
            click.echo(f"{p['label']}\t{p['confidence']:.6f}")


@main.command()
@click.argument("manifest", type=click.Path(exists=True))
@click.argument("blob", type=click.Path(exists=True))
@click.argument("image", type=click.Path(exists=True))
@click.option("--engine", default="ad", show_default=True,
              type=click.Choice(["ad", "min", "max", "avg", "zero"]))
@click.option("--gamma", required=True, type=float,
              help="Confidence threshold as a fraction of the original confidence.")
@click.option("--seed", required=True, type=int)
@click.option("--tau", default=0.0, show_default=True)
@click.option("--iterations", default=20, show_default=True)
@click.option("--chunk-px", default=4, show_default=True)
@click.option("--out", "out_prefix", required=True, type=click.Path(),
              help="Output prefix for the PGM mask and JSON sidecar.")
@click.pass_context
def explain(ctx, manifest, blob, image, engine, gamma, seed, tau, iterations,
            chunk_px, out_prefix):
    """Extract an explanation for IMAGE and write its artifacts."""
    with _client(ctx.obj["server"]) as client:
        model_id = _load(client, manifest, blob)
        out = _call(client, "POST", f"/models/{model_id}/explain", {
            "image_path": image, "engine": engine, "gamma": gamma, "seed": seed,
            "tau": tau, "iterations": iterations, "chunk_px": chunk_px,
            "out_prefix": out_prefix})
    click.echo(json.dumps(out, indent=2))


@main.command()
@click.argument("manifest", type=click.Path(exists=True))
@click.argument("blob", type=click.Path(exists=True))
@click.argument("dataset_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--engines", default="ad,zero", show_default=True,
              help="Comma-separated engine list.")
@click.option("--gammas", default="0,0.1,0.3,0.5,0.7,0.9", show_default=True,
              help="Comma-separated confidence thresholds.")
@click.option("--backgrounds", default=100, show_default=True)
@click.option("--bg-pool", default=None, type=click.Path(file_okay=False),
              help="Directory of IID background images (with labels.json).")
@click.option("--seed", required=True, type=int)
@click.option("--tau", default=0.0, show_default=True)
@click.option("--iterations", default=20, show_default=True)
@click.option("--chunk-px", default=4, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.pass_context
def evaluate(ctx, manifest, blob, dataset_dir, engines, gammas, backgrounds,
             bg_pool, seed, tau, iterations, chunk_px, out_dir):
    """Run the robustness/size/confidence protocol over DATASET_DIR."""
    with _client(ctx.obj["server"]) as client:
        model_id = _load(client, manifest, blob)
        out = _call(client, "POST", f"/models/{model_id}/evaluate", {
            "dataset_dir": dataset_dir,
            "engines": [e.strip() for e in engines.split(",") if e.strip()],
            "gammas": [float(g) for g in gammas.split(",") if g.strip()],
            "backgrounds": backgrounds, "background_pool_dir": bg_pool,
            "seed": seed, "tau": tau, "iterations": iterations,
            "chunk_px": chunk_px, "out_dir": out_dir})
    click.echo(f"report: {out['report_csv']}")
    for row in out["rows"]:
        click.echo(f"{row['engine']}\tgamma={row['gamma']:g}\t"
                   f"rho_solid={row['rho_solid']:.3f}\trho_iid={row['rho_iid']:.3f}\t"
                   f"size={row['mean_size']:.3f}\tconf={row['mean_confidence']:.3f}\t"
                   f"n={row['n']}")


@main.command("verify-equivalence")
@click.argument("manifest", type=click.Path(exists=True))
@click.argument("blob", type=click.Path(exists=True))
@click.option("--trials", default=100, show_default=True)
@click.option("--tau", "taus", default="0,0.25,0.49", show_default=True,
              help="Comma-separated threshold list.")
@click.option("--seed", default=0, show_default=True)
@click.option("--tolerance", default=1e-5, show_default=True)
@click.pass_context
def verify_equivalence(ctx, manifest, blob, trials, taus, seed, tolerance):
    """Check the masked pass matches the plain forward on unoccluded inputs."""
    with _client(ctx.obj["server"]) as client:
        model_id = _load(client, manifest, blob)
        out = _call(client, "POST", f"/models/{model_id}/verify", {
            "trials": trials, "taus": [float(t) for t in taus.split(",")],
            "seed": seed, "tolerance": tolerance})
    status = "PASS" if out["passed"] else "FAIL"
    click.echo(f"{status}: max deviation {out['max_deviation']:.3e} over "
               f"{out['trials']} trials, taus {out['taus']}")
    if not out["passed"]:
        click.echo(f"first divergence: {out['first_failure']}", err=True)
        sys.exit(1)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn
    uvicorn.run("convad.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
