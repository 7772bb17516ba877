import click

from .server import DEFAULT_MAX_BATCH, serve


@click.command()
@click.option("--model", required=True, help="model name or local checkpoint path")
@click.option("--port", type=int, default=8571, show_default=True)
@click.option("--device", default="cpu", show_default=True)
@click.option("--max-batch", type=int, default=DEFAULT_MAX_BATCH, show_default=True)
def run(model, port, device, max_batch):
    """Serve /info and /embed for a masked-language-model encoder."""
    serve(model, port, device=device, max_batch=max_batch)


if __name__ == "__main__":
    run()
