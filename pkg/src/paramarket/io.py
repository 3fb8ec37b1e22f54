"""File emitters with pinned schemas: trades.csv, curves.csv, summary.json.

All outputs are UTF-8 with LF line endings and 17-significant-digit decimals,
written atomically (temp file in the target directory, then rename), so a
rerun with the same seed produces byte-identical files.
"""

import json
import math
import os
import tempfile

from .engine import MarketLog, convergence_metrics

__all__ = [
    "TRADES_HEADER",
    "CURVES_HEADER",
    "fmt",
    "atomic_write_text",
    "trades_csv",
    "curves_csv",
    "summary_dict",
    "write_run_outputs",
]

TRADES_HEADER = (
    "round,buyer,seller,merge_weight,gain_kind,gain_value,gain_beneficial,"
    "buyer_valuation,seller_valuation,payment,indicator"
)
CURVES_HEADER = "round,agent,broker_loss,own_loss,est_error,cum_payment"


def fmt(value) -> str:
    """17-significant-digit decimal; empty string for absent values."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return f"{value:.17g}"
    return str(value)


def atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def trades_csv(log: MarketLog) -> str:
    lines = [TRADES_HEADER]
    for r in log.trades:
        lines.append(
            ",".join(
                (
                    str(r.round_index),
                    r.buyer,
                    r.seller,
                    fmt(r.merge_weight),
                    r.gain.kind.value,
                    fmt(r.gain.value),
                    fmt(r.gain.trade_beneficial),
                    fmt(r.buyer_valuation),
                    fmt(r.seller_valuation),
                    fmt(r.payment),
                    fmt(r.indicator),
                )
            )
        )
    return "\n".join(lines) + "\n"


def curves_csv(log: MarketLog) -> str:
    lines = [CURVES_HEADER]
    for row in log.curves:
        lines.append(
            ",".join(
                (
                    str(row.round_index),
                    row.agent,
                    fmt(row.broker_loss),
                    fmt(row.own_loss),
                    fmt(row.est_error),
                    fmt(row.cum_payment),
                )
            )
        )
    return "\n".join(lines) + "\n"


def summary_dict(log: MarketLog) -> dict:
    agents = {}
    for u in log.agent_ids:
        final = log.final_row(u)
        agents[u] = {
            "final_broker_loss": final.broker_loss,
            "final_own_loss": final.own_loss,
            "final_est_error": None if math.isnan(final.est_error) else final.est_error,
            "cum_payment": final.cum_payment,
            "executed_trades": sum(1 for r in log.trades if r.buyer == u and r.indicator),
            "declined_or_failed": sum(1 for r in log.trades if r.buyer == u and not r.indicator),
        }
    out = {
        "config": log.config_echo,
        "agents": agents,
        "total_trades_executed": sum(1 for r in log.trades if r.indicator),
        "rounds": max((r.round_index for r in log.curves), default=0),
    }
    eps = log.config_echo.get("convergence_epsilon")
    if eps is not None:
        out["convergence_rounds"] = convergence_metrics(log, float(eps))
    return out


def write_run_outputs(log: MarketLog, out_dir: str) -> dict:
    """Emit the three run artifacts into ``out_dir``; returns their paths."""
    paths = {
        "trades": os.path.join(out_dir, "trades.csv"),
        "curves": os.path.join(out_dir, "curves.csv"),
        "summary": os.path.join(out_dir, "summary.json"),
    }
    atomic_write_text(paths["trades"], trades_csv(log))
    atomic_write_text(paths["curves"], curves_csv(log))
    atomic_write_text(
        paths["summary"], json.dumps(summary_dict(log), indent=2, sort_keys=True) + "\n"
    )
    return paths
