import logging
import os
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12g"


class PlotDataWriter:
    """
    Write sweep and trace tables as CSV plot data. Plots themselves are not
    produced; every table lands in the output directory.
    """

    def __init__(self, output_dir: str = "results"):
        """
        Initialize the writer.

        Args:
            output_dir: Directory the CSV files are written to
        """
        self.output_dir = output_dir
        if not os.path.exists(output_dir):
            os.makedirs(output_dir)

    def _frame(self, rows: Any, columns: Optional[Sequence[str]] = None) -> Optional[pd.DataFrame]:
        if isinstance(rows, pd.DataFrame):
            df = rows
        elif not rows:
            return None
        else:
            df = pd.DataFrame(list(rows), columns=list(columns) if columns else None)
        return df.replace([np.inf, -np.inf], np.nan)

    def write_sweep(self, rows: Any, columns: Optional[Sequence[str]] = None, filename: str = "data.csv") -> Optional[str]:
        """
        Write a sweep table.

        Args:
            rows: DataFrame or list of dict rows
            columns: Column order (defaults to the row keys)
            filename: Target file name

        Returns:
            str: Path to the written file, None if there was nothing to write
        """
        df = self._frame(rows, columns)
        if df is None or df.empty:
            logger.warning(f"No rows to write to {filename}")
            return None
        path = os.path.join(self.output_dir, filename)
        df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        logger.info(f"Wrote {len(df)} rows to {path}")
        return path

    def write_traces(self, traces: Dict[str, pd.DataFrame], prefix: str = "trace") -> List[str]:
        """One CSV per trace, named <prefix>_<key>.csv in key order."""
        paths = []
        for key in sorted(traces):
            path = self.write_sweep(traces[key], filename=f"{prefix}_{key}.csv")
            if path:
                paths.append(path)
        return paths


def merge_rows(chunks: Sequence[Sequence[Dict[str, Any]]]) -> List[Dict[str, Any]]:
    """Concatenate per-job row lists in submission order."""
    rows: List[Dict[str, Any]] = []
    for chunk in chunks:
        rows.extend(chunk)
    return rows
