import sys

import click

from .exporter import DEFAULT_BATCH_SIZE, ModelUnavailable, export_embeddings


@click.command()
@click.option("--graphs", "graphs_path", type=click.Path(exists=True),
              required=True, help="Preprocessed graphs file (JSONL).")
@click.option("--model", "model_id", required=True,
              help="sentence-transformers model id, or dummy:<dim>.")
@click.option("--out", "out_path", type=click.Path(), required=True,
              help="Embedding cache file to write.")
@click.option("--batch-size", type=int, default=DEFAULT_BATCH_SIZE,
              show_default=True)
def cli(graphs_path, model_id, out_path, batch_size):
    """Embed every unique text of a graphs file into a cache file."""
    manifest = export_embeddings(graphs_path, model_id, out_path, batch_size)
    click.echo(f"texts: {manifest.text_count}")
    click.echo(f"dim: {manifest.dim}")
    click.echo(f"cache: {manifest.cache_path}")
    click.echo(f"sha256: {manifest.content_hash}")


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        return 1
    except ModelUnavailable as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
