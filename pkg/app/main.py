import argparse
import asyncio
import logging
import signal
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from app.agents.oracle import AgentDescriptor, QueryInstance
from app.benchmark import BenchmarkSpec, generate_benchmark, write_benchmark
from app.config import RunConfig, settings
from app.corpus.passages import PassageStore
from app.errors import IUMError
from app.eval.metrics import query_outcomes
from app.eval.sweeps import (
    evaluate_params,
    personalization_analysis,
    run_online_report,
    significance_table,
    sweep_batch_size,
    sweep_iterations,
)
from app.index.bm25 import build_index, load_index, save_index
from app.ium.engine import DEFAULT_POOL_CACHE_SIZE, SearchEngine
from app.ium.offline import offline_train
from app.ium.online import OnlineConfig
from app.reranker.checkpoint import load_checkpoint
from app.reranker.model import RerankerParams
from app.serve.client import OracleAgentClient, SocketTransport
from app.serve.server import BackgroundServer, ServeServer, run_stdio
from app.storage.db import Database
from app.storage.runs import RunDirectory

logger = logging.getLogger(__name__)


def configure_logging(level: Optional[str] = None, log_file: Optional[str] = None) -> None:
    """Configure root logging for the command line; library modules never do this"""
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stdout)]
    log_file = log_file if log_file is not None else settings.LOG_FILE
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=getattr(logging, (level or settings.LOG_LEVEL).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def load_engine(config: RunConfig) -> SearchEngine:
    """Passage store from the corpus, index from a snapshot when configured"""
    store = PassageStore.from_tsv(config.corpus, max_words=config.max_words)
    index = load_index(config.index) if config.index is not None else build_index(store)
    if index.num_docs != len(store):
        raise IUMError(f"index holds {index.num_docs} passages but the corpus has {len(store)}")
    return SearchEngine(store, index, config.offline.first_stage_n)


def shared_queries(config: RunConfig, agents: Sequence[AgentDescriptor], split: str) -> List[QueryInstance]:
    """One query list for all agents: every task's queries, in roster order"""
    queries: List[QueryInstance] = []
    seen = set()
    for query_list in config.load_query_sets(agents, split).values():
        for query in query_list:
            if query.query_id not in seen:
                seen.add(query.query_id)
                queries.append(query)
    return queries


def cmd_gen_benchmark(args) -> int:
    spec = BenchmarkSpec(seed=args.seed)
    if args.small:
        spec = spec.model_copy(update={
            "train_per_task": 24, "test_per_task": 16, "stream_per_task": 32, "background_docs": 40,
        })
    config_path = write_benchmark(generate_benchmark(spec), args.out)
    print(f"Benchmark written; run config at {config_path}")
    return 0


def cmd_build_index(args) -> int:
    store = PassageStore.from_tsv(args.corpus, max_words=args.max_words, strict=not args.lenient)
    index = build_index(store)
    save_index(index, args.out)
    print(f"Indexed {index.num_docs} passages ({len(index.postings)} terms) into {args.out}")
    return 0


def cmd_train_offline(args) -> int:
    config = RunConfig.load(args.config)
    agents = config.load_agents()
    train_sets = config.load_query_sets(agents, config.train_split)
    engine = load_engine(config)
    run = RunDirectory(config.output_dir).create()
    run.update_manifest("config", config.to_manifest())

    theta0 = RerankerParams.zeros()
    run.save_checkpoint(0, theta0)
    iterations: List[dict] = []

    def on_iteration(t, params, metrics):
        run.save_checkpoint(t, params)
        iterations.append(metrics.to_dict())
        run.update_manifest("offline", {"iterations": iterations, "final_checkpoint": str(run.checkpoint_path(t))})

    offline_train(theta0, agents, train_sets, engine, config.offline, config.optimizer, on_iteration=on_iteration)
    print(f"Trained {config.offline.T} iterations; final checkpoint {run.checkpoint_path(config.offline.T)}")
    return 0


def cmd_evaluate(args) -> int:
    config = RunConfig.load(args.config)
    checkpoint = load_checkpoint(args.checkpoint)
    agents = config.load_agents()
    split = args.split or config.eval_split
    query_sets = config.load_query_sets(agents, split)
    engine = load_engine(config)

    personalized = config.offline.personalized
    baseline = evaluate_params(engine, RerankerParams.zeros(), agents, query_sets, personalized)
    report = evaluate_params(engine, checkpoint, agents, query_sets, personalized)
    table = significance_table(baseline, report)

    run = RunDirectory(config.output_dir).create()
    tag = args.tag or Path(args.checkpoint).stem
    run.write_report(f"evaluate_{tag}_{split}", table)
    run.update_manifest(f"evaluate_{tag}_{split}", {
        "checkpoint": str(args.checkpoint),
        "split": split,
        "macro_utility": report.macro_average,
        "baseline_macro_utility": baseline.macro_average,
    })
    print(f"Macro utility {report.macro_average:.4f} (first-stage order {baseline.macro_average:.4f}) on {split}")
    return 0


def cmd_run_online(args) -> int:
    config = RunConfig.load(args.config)
    checkpoint = load_checkpoint(args.checkpoint)
    agents = config.load_agents()
    stream_sets = config.load_query_sets(agents, config.stream_split)
    engine = load_engine(config)
    online = config.online if args.b is None else config.online.model_copy(update={"b": args.b})
    run = RunDirectory(config.output_dir).create()

    if args.via_protocol:
        report_rows, final_params = _run_online_over_wire(engine, checkpoint, agents, stream_sets, online, config)
        frame = _frame(report_rows)
    else:
        report, sessions = run_online_report(engine, agents, stream_sets, checkpoint, online, config.optimizer)
        final_params = {agent_id: s.params for agent_id, s in sessions.items()}
        frame = _frame([
            {"agent_id": a.agent_id, "utility": report.per_agent[a.agent_id], "updates": sessions[a.agent_id].update_count}
            for a in agents
        ])

    for agent_id in sorted(final_params):
        run.save_online(agent_id, final_params[agent_id])
    run.write_report(f"online_b{online.b}", frame)
    macro = float(frame["utility"].mean()) if len(frame) else 0.0
    run.update_manifest(f"online_b{online.b}", {
        "checkpoint": str(args.checkpoint),
        "online": online.model_dump(mode="json"),
        "via_protocol": bool(args.via_protocol),
        "macro_utility": macro,
    })
    print(f"Online macro utility {macro:.4f} with b={online.b}")
    return 0


def _frame(rows):
    return pd.DataFrame(rows, columns=["agent_id", "utility", "updates"])


def _run_online_over_wire(engine, checkpoint, agents, stream_sets, online: OnlineConfig, config: RunConfig):
    server = ServeServer(engine, checkpoint, online, config.optimizer, retain_sessions=True)
    rows = []
    final_params: Dict[str, RerankerParams] = {}
    with BackgroundServer(server, settings.SERVE_HOST, 0) as background:
        for agent in agents:
            transport = SocketTransport(settings.SERVE_HOST, background.port)
            try:
                client = OracleAgentClient(agent, transport)
                client.hello()
                result = client.run(stream_sets[agent.agent_id])
                client.shutdown()
            finally:
                transport.close()
            queries = stream_sets[agent.agent_id]
            outcomes = query_outcomes(agent, result.passage_ids(), queries, engine.store)
            rows.append({"agent_id": agent.agent_id, "utility": float(np.mean(outcomes)), "updates": result.update_counter})
            session = next(s for s in server.retained if s.learner and s.learner.session.agent_id == agent.agent_id)
            final_params[agent.agent_id] = session.learner.session.params
    return rows, final_params


def cmd_analyze(args) -> int:
    config = RunConfig.load(args.config)
    agents = config.load_agents()
    queries = shared_queries(config, agents, args.split or config.eval_split)
    engine = load_engine(config)
    run = RunDirectory(config.output_dir).create()

    runs = [("personalized", load_checkpoint(args.checkpoint), True)]
    if args.ablation_checkpoint:
        runs.append(("non_personalized", load_checkpoint(args.ablation_checkpoint), False))

    summaries = {}
    for name, params, personalized in runs:
        report = personalization_analysis(engine, params, agents, queries, personalized, depth=args.depth)
        jac = report.jaccard.reset_index().rename(columns={"index": "agent_id"})
        tau = report.kendall_tau.reset_index().rename(columns={"index": "agent_id"})
        run.write_report(f"jaccard_{name}", jac)
        run.write_report(f"kendall_tau_{name}", tau)
        run.write_report(f"pairs_{name}", report.pairs)
        summaries[name] = report.summary
        print(f"{name}: mean Jaccard {report.summary['mean_jaccard']:.4f}, "
              f"tau same-kind {report.summary['mean_tau_same_kind']:.4f}, "
              f"cross-kind {report.summary['mean_tau_cross_kind']:.4f}")
    run.update_manifest("analysis", {"depth": args.depth, "queries": len(queries), "summaries": summaries})
    return 0


def cmd_sweep_iterations(args) -> int:
    config = RunConfig.load(args.config)
    agents = config.load_agents()
    train_sets = config.load_query_sets(agents, config.train_split)
    eval_sets = config.load_query_sets(agents, config.eval_split)
    engine = load_engine(config)

    table = sweep_iterations(engine, agents, train_sets, eval_sets, config.offline, config.optimizer)
    run = RunDirectory(config.output_dir).create()
    run.update_manifest("config", config.to_manifest())
    run.write_report("sweep_iterations", table)
    run.update_manifest("sweep_iterations", table[["personalized", "iteration", "macro_utility"]].to_dict("records"))
    print(table[["personalized", "iteration", "macro_utility"]].to_string(index=False))
    return 0


def cmd_sweep_batch(args) -> int:
    config = RunConfig.load(args.config)
    checkpoint = load_checkpoint(args.checkpoint)
    agents = config.load_agents()
    stream_sets = config.load_query_sets(agents, config.stream_split)
    engine = load_engine(config)
    b_values = [int(b) for b in args.b_values.split(",")] if args.b_values else config.b_values
    if any(b < 1 for b in b_values):
        raise IUMError("b values must be >= 1")

    table = sweep_batch_size(engine, agents, stream_sets, checkpoint, b_values, config.online, config.optimizer)
    run = RunDirectory(config.output_dir).create()
    run.write_report("sweep_batch_size", table)
    run.update_manifest("sweep_batch_size", {
        "checkpoint": str(args.checkpoint),
        "rows": [
            {"b": None if pd.isna(row.b) else int(row.b), "updates": int(row.updates), "macro_utility": float(row.macro_utility)}
            for row in table.itertuples()
        ],
    })
    print(table[["b", "updates", "macro_utility"]].to_string(index=False))
    return 0


def cmd_serve(args) -> int:
    store = PassageStore.from_tsv(args.corpus, max_words=args.max_words)
    index = load_index(args.index) if args.index else build_index(store)
    engine = SearchEngine(store, index, args.first_stage_n, pool_cache_size=args.pool_cache_size)
    checkpoint = load_checkpoint(args.checkpoint)
    online = OnlineConfig(b=args.b, epochs=args.epochs, seed=args.seed, count_by=args.count_by)
    db = Database(args.database_url or settings.DATABASE_URL)
    server = ServeServer(engine, checkpoint, online, db=db)

    if args.stdio:
        run_stdio(server)
        db.close()
        return 0

    status_port = args.status_port if args.status_port is not None else settings.STATUS_PORT
    if status_port:
        from app.serve.status import create_status_app, start_status_server
        start_status_server(create_status_app(server.registry, db), args.host, status_port, settings.LOG_LEVEL)

    async def serve():
        loop = asyncio.get_running_loop()
        stop = loop.create_future()
        for signum in (signal.SIGINT, signal.SIGTERM):
            try:
                loop.add_signal_handler(signum, lambda s=signum: stop.done() or stop.set_result(s))
            except NotImplementedError:
                pass
        await server.start(args.host, args.port)
        received = await stop
        logger.info(f"Received signal {received}, shutting down...")
        server.close()

    try:
        asyncio.run(serve())
    finally:
        db.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Unified search engine for retrieval-augmented agents')
    parser.add_argument('--log-level', type=str, default=None, help='Override LOG_LEVEL')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('gen-benchmark', help='Write the synthetic benchmark')
    p.add_argument('--seed', type=int, required=True, help='Generator seed')
    p.add_argument('--out', type=str, required=True, help='Output directory')
    p.add_argument('--small', action='store_true', help='Few queries per task, for smoke runs')
    p.set_defaults(func=cmd_gen_benchmark)

    p = sub.add_parser('build-index', help='Split a TSV corpus and write a BM25 index snapshot')
    p.add_argument('--corpus', type=str, required=True, help='Corpus TSV (id, text, title)')
    p.add_argument('--out', type=str, required=True, help='Snapshot path')
    p.add_argument('--max-words', type=int, default=100, help='Passage length in words')
    p.add_argument('--lenient', action='store_true', help='Skip malformed lines instead of aborting')
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser('train-offline', help='Iterative offline training over all agents')
    p.add_argument('--config', type=str, required=True, help='Run config JSON')
    p.set_defaults(func=cmd_train_offline)

    p = sub.add_parser('run-online', help='Per-agent online sessions from a checkpoint')
    p.add_argument('--config', type=str, required=True, help='Run config JSON')
    p.add_argument('--checkpoint', type=str, required=True, help='Offline checkpoint')
    p.add_argument('--b', type=int, default=None, help='Override the online batch size')
    p.add_argument('--via-protocol', action='store_true', help='Drive agents over a local socket server')
    p.set_defaults(func=cmd_run_online)

    p = sub.add_parser('evaluate', help='Downstream utility of a checkpoint')
    p.add_argument('--config', type=str, required=True, help='Run config JSON')
    p.add_argument('--checkpoint', type=str, required=True, help='Checkpoint to evaluate')
    p.add_argument('--split', type=str, default=None, help='Query split (default: eval_split)')
    p.add_argument('--tag', type=str, default=None, help='Report name (default: checkpoint file stem)')
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser('analyze', help='Pairwise list similarity across agents')
    p.add_argument('--config', type=str, required=True, help='Run config JSON')
    p.add_argument('--checkpoint', type=str, required=True, help='Personalized checkpoint')
    p.add_argument('--ablation-checkpoint', type=str, default=None, help='Checkpoint trained without IDs')
    p.add_argument('--depth', type=int, default=None, help='Compare at this depth instead of min(k)')
    p.add_argument('--split', type=str, default=None, help='Query split (default: eval_split)')
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser('sweep-iterations', help='Utility per offline iteration, with and without IDs')
    p.add_argument('--config', type=str, required=True, help='Run config JSON')
    p.set_defaults(func=cmd_sweep_iterations)

    p = sub.add_parser('sweep-batch', help='Online utility per batch size')
    p.add_argument('--config', type=str, required=True, help='Run config JSON')
    p.add_argument('--checkpoint', type=str, required=True, help='Offline checkpoint')
    p.add_argument('--b-values', type=str, default=None, help='Comma-separated batch sizes')
    p.set_defaults(func=cmd_sweep_batch)

    p = sub.add_parser('serve', help='Serve agents over newline-delimited JSON')
    p.add_argument('--corpus', type=str, required=True, help='Corpus TSV')
    p.add_argument('--checkpoint', type=str, required=True, help='Offline checkpoint')
    p.add_argument('--index', type=str, default=None, help='Index snapshot (built from the corpus if absent)')
    p.add_argument('--host', type=str, default=settings.SERVE_HOST, help='Bind address')
    p.add_argument('--port', type=int, default=settings.SERVE_PORT, help='Bind port')
    p.add_argument('--b', type=int, default=256, help='Online batch size')
    p.add_argument('--epochs', type=int, default=2, help='Epochs per online update')
    p.add_argument('--seed', type=int, required=True, help='Training seed')
    p.add_argument('--count-by', choices=['queries', 'records'], default='queries', help='Unit counted toward b')
    p.add_argument('--max-words', type=int, default=100, help='Passage length in words')
    p.add_argument('--first-stage-n', type=int, default=100, help='BM25 candidates per query')
    p.add_argument('--pool-cache-size', type=int, default=DEFAULT_POOL_CACHE_SIZE, help='Queries whose candidates stay cached')
    p.add_argument('--status-port', type=int, default=None, help='Also serve /healthz and /metrics here')
    p.add_argument('--database-url', type=str, default=None, help='Serve log database (default: DATABASE_URL)')
    p.add_argument('--stdio', action='store_true', help='One session over stdin/stdout')
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point"""
    parser = build_parser()
    args = parser.parse_args(argv)
    # stdout carries the protocol in stdio mode
    if getattr(args, 'stdio', False):
        logging.basicConfig(level=logging.WARNING, stream=sys.stderr, force=True)
    else:
        configure_logging(args.log_level)

    try:
        return args.func(args)
    except (IUMError, OSError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        logger.info("Interrupted")
        return 130


if __name__ == "__main__":
    sys.exit(main())
