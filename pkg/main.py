"""
Main application entry point for the retrieval toolkit.
Provides the `retro` CLI binding ingestion, indexing, generation, training,
search, evaluation, analysis and the experiment matrix.
"""

import functools
import json
import logging
import os
import sys
from typing import List, Optional

import click

from artifacts import dumps_json, require_file, split_list_option, write_json
from config import FULLSCALE_NOTES, PRESETS, config, load_run_config, preset_config
from corpus import (
    DEFAULT_MAX_WORDS, INPUT_FORMATS, chunk_corpus, ingest_documents, read_passages, read_qa, write_passages,
)
from database import get_db_manager
from dense_index import DenseIndex, build_dense
from encoder import DualEncoder, init_params
from errors import ConfigError, UsageError, exit_code_for
from experiments import (
    DEFAULT_TOP_N, MatrixInputs, RetrievalRun, bm25_run, corpus_tokens, dense_run, load_stopwords,
    question_token_coverage, read_questions, render_table, run_matrix, summarize_rows, topk_accuracy,
    vocab_overlap, write_csv,
)
from generator import (
    DEFAULT_NEGATIVE_DEPTH, DEFAULT_QUESTIONS_PER_PASSAGE, SamplerConfig, generate_pool, read_synthetic, write_synthetic,
)
from lexical_index import Bm25Params, InvertedIndex, build_index
from toyworld import DOMAINS, make_world
from trainer import SyntheticPool, finetune_examples, train, write_training_log

logger = logging.getLogger(__name__)

EXIT_USAGE = 1


def initialize_application() -> bool:
    """
    Initialize application components.

    Returns:
        True if initialization successful, False otherwise
    """
    try:
        if not config.validate():
            return False
        config.setup_logging()
        logger.debug("Retrieval toolkit starting")
        return True
    except Exception as e:
        print(f"Failed to initialize application: {e}")
        return False


class RetroGroup(click.Group):
    """Click group whose usage errors exit with status 1."""

    def main(self, *args, standalone_mode: bool = True, **kwargs):
        try:
            code = super().main(*args, standalone_mode=False, **kwargs)
        except click.ClickException as e:
            e.show()
            sys.exit(EXIT_USAGE)
        except click.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(EXIT_USAGE)
        if not standalone_mode:
            return code
        sys.exit(code if isinstance(code, int) else 0)


def reports_errors(func):
    """Turn any failure into one `error[<code>] <Type>: <message>` line and its exit code."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (click.ClickException, click.Abort):
            raise
        except Exception as e:
            code = exit_code_for(e)
            logger.error(f"{func.__name__} failed: {type(e).__name__}: {e}")
            click.echo(f"error[{code}] {type(e).__name__}: {e}", err=True)
            sys.exit(code)

    return wrapper


def _int_list(ctx, param, value: Optional[str]) -> Optional[List[int]]:
    if value is None:
        return None
    try:
        items = [int(item) for item in split_list_option(value)]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {value!r}")
    if not items:
        raise click.BadParameter("expected at least one integer")
    return items


def _required_path(value: Optional[str], name: str) -> str:
    if not value:
        raise ConfigError(f"{name} is required for this command")
    return require_file(value)


@click.group(cls=RetroGroup)
def cli():
    """retro - synthetic pretraining for dense passage retrieval."""
    if not initialize_application():
        sys.exit(EXIT_USAGE)


@cli.command()
@click.option('--input', 'input_path', required=True, help='Corpus file (UTF-8)')
@click.option('--format', 'fmt', type=click.Choice(INPUT_FORMATS), required=True, help='Corpus format')
@click.option('--out', required=True, help='Output passage store (JSONL)')
@click.option('--max-words', default=DEFAULT_MAX_WORDS, show_default=True, help='Maximum words per passage')
@reports_errors
def ingest(input_path: str, fmt: str, out: str, max_words: int):
    """Chunk a corpus into sentence-preserving passages."""
    with open(require_file(input_path), 'rb') as handle:
        documents = ingest_documents(handle, fmt)
    passages = chunk_corpus(documents, max_words)
    write_passages(out, passages)
    click.echo(f"✅ {len(documents)} documents -> {len(passages)} passages in {out}")


@cli.command('index-bm25')
@click.option('--passages', required=True, help='Passage store (JSONL)')
@click.option('--out', required=True, help='Output index file')
@click.option('--k1', default=1.2, show_default=True, help='BM25 term-frequency saturation')
@click.option('--b', default=0.75, show_default=True, help='BM25 length normalization')
@reports_errors
def index_bm25(passages: str, out: str, k1: float, b: float):
    """Build the BM25 inverted index."""
    index = build_index(read_passages(require_file(passages)), Bm25Params(k1=k1, b=b))
    index.save(out)
    click.echo(f"✅ Indexed {len(index)} passages ({len(index.postings)} terms) into {out}")


@cli.command()
@click.option('--passages', required=True, help='Passage store (JSONL)')
@click.option('--bm25', 'bm25_path', help='BM25 index for hard-negative mining')
@click.option('--n', 'n_questions', default=DEFAULT_QUESTIONS_PER_PASSAGE, show_default=True,
              help='Questions sampled per passage')
@click.option('--top-p', default=0.95, show_default=True, help='Nucleus mass kept by the sampler')
@click.option('--top-k', default=10, show_default=True, help='Candidates kept by the sampler')
@click.option('--depth', default=DEFAULT_NEGATIVE_DEPTH, show_default=True, help='BM25 depth for negatives')
@click.option('--seed', type=int, required=True, help='Sampling seed')
@click.option('--out', required=True, help='Output synthetic examples (JSONL)')
@reports_errors
def generate(passages: str, bm25_path: Optional[str], n_questions: int, top_p: float, top_k: int,
             depth: int, seed: int, out: str):
    """Generate synthetic questions and mine BM25 hard negatives."""
    store = read_passages(require_file(passages))
    index = InvertedIndex.load(require_file(bm25_path)) if bm25_path else None
    examples = generate_pool(store, index, n_questions, SamplerConfig(top_p, top_k, seed), depth)
    count = write_synthetic(out, examples)
    click.echo(f"✅ {count} synthetic examples written to {out}")


@cli.command('train')
@click.option('--config', 'config_path', required=True, help='Run configuration (JSON)')
@click.option('--stage', type=click.Choice(['pretrain', 'finetune', 'both']), default='both', show_default=True)
@click.option('--out-dir', help='Checkpoint directory (default: paths.out_dir, then RETRO_ARTIFACT_DIR)')
@click.option('--init', 'init_path', help='Start from this checkpoint instead of a fresh encoder')
@click.option('--baseline', is_flag=True, help='Also finetune a fresh encoder into finetune_only.ckpt')
@reports_errors
def train_command(config_path: str, stage: str, out_dir: Optional[str], init_path: Optional[str], baseline: bool):
    """Pretrain on synthetic data and/or finetune on gold QA (epochs: 6 / 20 by default)."""
    run_config = load_run_config(require_file(config_path))
    out_dir = out_dir or run_config.paths.out_dir or config.artifact_dir
    if baseline and stage == 'pretrain':
        raise UsageError("--baseline needs a finetuning stage")
    paths = run_config.paths
    passages = read_passages(_required_path(paths.passages, 'paths.passages'))
    model = DualEncoder.load(require_file(init_path)) if init_path else init_params(run_config.trainer.encoder)
    records = []

    if stage in ('pretrain', 'both'):
        pool = SyntheticPool.from_examples(read_synthetic(_required_path(paths.synthetic, 'paths.synthetic')))
        model = train(model, pool, passages, run_config.trainer.pretrain, records.append)
        model.save(os.path.join(out_dir, 'pretrained.ckpt'))

    if stage in ('finetune', 'both'):
        gold_qa = read_qa(_required_path(paths.train_qa, 'paths.train_qa'))
        index = InvertedIndex.load(require_file(paths.bm25_index)) if paths.bm25_index else None
        finetune_config = run_config.trainer.finetune
        gold = finetune_examples(gold_qa, passages, index, run_config.generator.negative_depth, finetune_config.seed)
        model = train(model, gold, passages, finetune_config, records.append)
        model.save(os.path.join(out_dir, 'finetuned.ckpt'))
        if baseline:
            baseline_records = []
            only = train(init_params(run_config.trainer.encoder), gold, passages, finetune_config,
                         baseline_records.append)
            only.save(os.path.join(out_dir, 'finetune_only.ckpt'))
            write_training_log(os.path.join(out_dir, 'finetune_only_log.jsonl'), baseline_records)

    write_training_log(os.path.join(out_dir, 'training_log.jsonl'), records)
    for record in records:
        click.echo(f"   [{record.stage}] epoch {record.epoch}: mean loss {record.mean_loss:.4f}")
    click.echo(f"✅ Training finished; checkpoints in {out_dir}")


@cli.command('index-dense')
@click.option('--ckpt', required=True, help='Dual-encoder checkpoint')
@click.option('--passages', required=True, help='Passage store (JSONL)')
@click.option('--out', required=True, help='Output dense index file')
@reports_errors
def index_dense(ckpt: str, passages: str, out: str):
    """Encode every passage with the passage tower."""
    encoder = DualEncoder.load(require_file(ckpt))
    index = build_dense(encoder, read_passages(require_file(passages)))
    index.save(out)
    click.echo(f"✅ Encoded {len(index)} passages into {out}")


@cli.command()
@click.option('--system', type=click.Choice(['bm25', 'dense']), required=True)
@click.option('--index', 'index_path', required=True, help='BM25 or dense index file')
@click.option('--queries', required=True, help='Questions (JSONL with a "question" field)')
@click.option('--k', default=100, show_default=True, help='Hits kept per question')
@click.option('--ckpt', help='Checkpoint for encoding questions (dense only)')
@click.option('--out', required=True, help='Output run (JSONL)')
@reports_errors
def search(system: str, index_path: str, queries: str, k: int, ckpt: Optional[str], out: str):
    """Retrieve the top-k passages for every question."""
    questions = read_questions(require_file(queries))
    if system == 'bm25':
        run = bm25_run(InvertedIndex.load(require_file(index_path)), questions, k)
    else:
        if not ckpt:
            raise UsageError("--ckpt is required for dense search")
        encoder = DualEncoder.load(require_file(ckpt))
        index = DenseIndex.load(require_file(index_path), expected_fingerprint=encoder.fingerprint())
        run = dense_run(encoder, index, questions, k)
    run.to_jsonl(out)
    click.echo(f"✅ {len(run)} questions searched ({system}, k={k}) -> {out}")


@cli.command('eval')
@click.option('--run', 'run_path', required=True, help='Run file from `retro search`')
@click.option('--qa', 'qa_path', required=True, help='QA pairs (JSONL)')
@click.option('--passages', required=True, help='Passage store (JSONL)')
@click.option('--ks', default='1,5,20,100', show_default=True, callback=_int_list, help='Cutoffs')
@click.option('--out', help='Output report (JSON)')
@reports_errors
def eval_command(run_path: str, qa_path: str, passages: str, ks: List[int], out: Optional[str]):
    """Top-k retrieval accuracy of a run."""
    run = RetrievalRun.from_jsonl(require_file(run_path))
    report = topk_accuracy(run, read_qa(require_file(qa_path)), ks, read_passages(require_file(passages)))
    record = {"system": run.system, **report.to_dict()}
    if out:
        write_json(out, record)
    for k in sorted(report.accuracy):
        click.echo(f"   Top-{k}: {100 * report.accuracy[k]:.1f}")
    click.echo(f"✅ Evaluated {report.question_count} questions" + (f" -> {out}" if out else ""))


@cli.group()
def analyze():
    """Domain-shift diagnostics."""


@analyze.command()
@click.option('--a', 'passages_a', required=True, help='First passage store')
@click.option('--b', 'passages_b', required=True, help='Second passage store')
@click.option('--top-n', default=DEFAULT_TOP_N, show_default=True, help='Vocabulary size per corpus')
@click.option('--stopwords', 'stopwords_path', help='Stop-word file (default: bundled list)')
@reports_errors
def overlap(passages_a: str, passages_b: str, top_n: int, stopwords_path: Optional[str]):
    """Overlap of the most frequent non-stopword tokens of two corpora."""
    stopwords = load_stopwords(require_file(stopwords_path) if stopwords_path else None)
    value = vocab_overlap(
        corpus_tokens(read_passages(require_file(passages_a))),
        corpus_tokens(read_passages(require_file(passages_b))),
        top_n,
        stopwords,
    )
    click.echo(dumps_json({"metric": "vocab_overlap", "top_n": top_n, "value": value}))


@analyze.command()
@click.option('--qa', 'qa_path', required=True, help='QA pairs with gold_passage_id')
@click.option('--passages', required=True, help='Passage store')
@click.option('--stopwords', 'stopwords_path', help='Stop-word file (default: bundled list)')
@reports_errors
def coverage(qa_path: str, passages: str, stopwords_path: Optional[str]):
    """Mean share of question tokens found in the gold passage."""
    stopwords = load_stopwords(require_file(stopwords_path) if stopwords_path else None)
    value = question_token_coverage(read_qa(require_file(qa_path)), read_passages(require_file(passages)), stopwords)
    click.echo(dumps_json({"metric": "question_token_coverage", "value": value}))


@cli.command()
@click.option('--config', 'config_path', required=True, help='Run configuration (JSON)')
@click.option('--sizes', default='100,200,400', show_default=True, callback=_int_list,
              help='Synthetic pool sizes (passages), ascending')
@click.option('--seeds', default='1,2,3,4,5', show_default=True, callback=_int_list, help='Training seeds')
@click.option('--jobs', type=int, default=None, help='Parallel seed workers (default: RETRO_JOBS)')
@click.option('--fixed-updates', type=int, help='Hold pretraining optimizer updates constant across sizes')
@click.option('--with-random', is_flag=True, help='Also score a randomly initialized encoder')
@click.option('--store', 'store_cells', is_flag=True,
              help='Save cells to the results database (implied by --resume or RETRO_DB_URL)')
@click.option('--resume', is_flag=True, help='Reuse cells stored in the results database')
@click.option('--out', help='Output report (JSON)')
@click.option('--csv', 'csv_path', help='Also export rows as CSV')
@reports_errors
def matrix(config_path: str, sizes: List[int], seeds: List[int], jobs: Optional[int], fixed_updates: Optional[int],
           with_random: bool, store_cells: bool, resume: bool, out: Optional[str], csv_path: Optional[str]):
    """BM25 vs finetune-only vs pretrain+finetune over pool sizes and seeds."""
    run_config = load_run_config(require_file(config_path))
    paths = run_config.paths
    inputs = MatrixInputs(
        passages=read_passages(_required_path(paths.passages, 'paths.passages')),
        train_qa=read_qa(_required_path(paths.train_qa, 'paths.train_qa')),
        test_qa=read_qa(_required_path(paths.test_qa, 'paths.test_qa')),
    )
    if paths.ood_passages:
        inputs.ood_passages = read_passages(require_file(paths.ood_passages))
        inputs.ood_test_qa = read_qa(require_file(paths.ood_test_qa))
    store = get_db_manager() if store_cells or resume or config.db_configured else None
    rows = run_matrix(
        inputs, sizes, seeds, run_config,
        jobs=jobs or config.jobs,
        fixed_updates=fixed_updates,
        with_random=with_random,
        store=store,
        resume=resume,
    )
    summary = summarize_rows(rows)
    if out:
        write_json(out, {
            "sizes": sizes,
            "seeds": seeds,
            "fixed_updates": fixed_updates,
            "rows": [row.to_dict() for row in rows],
            "summary": [row.to_dict() for row in summary],
        })
    if csv_path:
        write_csv(csv_path, rows, run_config.eval.ks)
    click.echo(render_table(summary, run_config.eval.ks))
    click.echo(f"✅ {len(rows)} reports" + (f" -> {out}" if out else ""))


@cli.command()
@click.option('--domain', type=click.Choice(DOMAINS), default='general', show_default=True)
@click.option('--entities', default=500, show_default=True, help='Entities (one passage each)')
@click.option('--train', 'n_train', default=50, show_default=True, help='Gold training questions')
@click.option('--test', 'n_test', default=50, show_default=True, help='Held-out test questions')
@click.option('--overlap', 'overlap_share', default=0.5, show_default=True,
              help='Share of test questions about training entities')
@click.option('--seed', type=int, required=True, help='World seed')
@click.option('--out-dir', required=True, help='Output directory')
@reports_errors
def toyworld(domain: str, entities: int, n_train: int, n_test: int, overlap_share: float, seed: int, out_dir: str):
    """Write a generated factual-template world with gold QA splits."""
    world = make_world(domain, entities, n_train, n_test, overlap_share, seed)
    paths = world.write(out_dir)
    for name, path in paths.items():
        click.echo(f"   {name}: {path}")
    click.echo(f"✅ {domain} toy world with {len(world.passages)} passages")


@cli.command('show-config')
@click.option('--config', 'config_path', help='Run configuration (JSON)')
@click.option('--preset', type=click.Choice(sorted(PRESETS)), help='Show a preset instead')
@reports_errors
def show_config(config_path: Optional[str], preset: Optional[str]):
    """Print the fully resolved run configuration."""
    if config_path:
        resolved = load_run_config(require_file(config_path))
    else:
        resolved = preset_config(preset or 'desk')
    record = resolved.to_dict()
    if resolved.preset == 'fullscale':
        record["fullscale_notes"] = FULLSCALE_NOTES
    click.echo(json.dumps(record, indent=2, sort_keys=True))
    click.echo(f"fingerprint: {resolved.fingerprint()}")


@cli.command()
@reports_errors
def stats():
    """Show results-store statistics."""
    store = get_db_manager()
    cells = store.get_cells()
    fingerprints = sorted({cell.fingerprint for cell in cells})

    click.echo("📊 Retrieval Results Store")
    click.echo("─" * 40)
    click.echo(f"Cells stored: {store.get_cell_count()}")
    click.echo(f"Run configurations: {len(fingerprints)}")
    click.echo(f"Database: {config.db_url}")
    for fingerprint in fingerprints:
        members = [cell for cell in cells if cell.fingerprint == fingerprint]
        systems = sorted({cell.system for cell in members})
        sizes = sorted({cell.size for cell in members})
        click.echo(f"   {fingerprint[:12]}: {len(members)} cells, systems {', '.join(systems)}, "
                   f"sizes {', '.join(str(size) for size in sizes)}")


@cli.command()
@click.confirmation_option(prompt='Are you sure you want to clear all stored results?')
@reports_errors
def clear():
    """Clear all cells from the results store."""
    removed = get_db_manager().clear_cells()
    click.echo(f"✅ Cleared {removed} cells from the results store.")


def main():
    cli(prog_name='retro')


if __name__ == '__main__':
    main()
