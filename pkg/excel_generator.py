"""
Output module v2.0
Wasserstein DRMDP certification toolkit
Writes result records as JSON lines, alpha-sweep CSV projections and an Excel workbook
"""

import json
import logging
import math
import os
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd

from business_logic import ResultRecord

# Logging setup
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ["alpha", "empirical_mean", "dr_lower", "dr_upper", "reg_value"]


def encode_value(value) -> str:
    """JSON text for value with every float rendered to 17 significant digits"""
    if isinstance(value, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {encode_value(v)}" for k, v in value.items()) + "}"
    if isinstance(value, np.ndarray):
        value = value.tolist()
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(encode_value(v) for v in value) + "]"
    if value is None:
        return "null"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        x = float(value)
        if math.isnan(x):
            return "NaN"
        if math.isinf(x):
            return "Infinity" if x > 0 else "-Infinity"
        text = format(x, ".17g")
        return text if any(c in text for c in ".en") else text + ".0"
    return json.dumps(str(value))


class RecordFormatter:
    """Record to text and table conversions"""

    @staticmethod
    def to_json_line(record: ResultRecord) -> str:
        return encode_value(record.to_dict())

    @staticmethod
    def sweep_frame(record: ResultRecord, state: int) -> pd.DataFrame:
        """Sandwich chain against alpha at one state"""
        rows = []
        for point in record.outputs.get("sweep", []):
            for entry in point["states"]:
                if entry["state"] == state:
                    rows.append({col: entry[col] for col in SWEEP_COLUMNS})
        return pd.DataFrame(rows, columns=SWEEP_COLUMNS)

    @staticmethod
    def results_frame(record: ResultRecord) -> pd.DataFrame:
        """Flat per-state rows for the Results sheet"""
        outputs = record.outputs
        if record.experiment == "sandwich":
            rows = [entry for point in outputs["sweep"] for entry in point["states"]]
            return pd.DataFrame(rows)
        if record.experiment == "approx":
            keep = ["state", "alpha", "lhs", "rhs_mean", "eta_estimate", "passed"]
            return pd.DataFrame([{k: entry[k] for k in keep} for entry in outputs["states"]])
        if record.experiment == "oos":
            return pd.DataFrame({"trial": np.arange(len(outputs["margins"])), "margin": outputs["margins"]})
        columns = ["nominal", "robust", "full_simplex", "robust_policy_nominal_value"]
        frame = pd.DataFrame({col: outputs[col] for col in columns})
        frame.insert(0, "state", np.arange(len(frame)))
        return frame

    @staticmethod
    def summary_frame(record: ResultRecord) -> pd.DataFrame:
        items = [("experiment", record.experiment), ("digest", record.digest),
                 ("result", "PASS" if record.passed else "FAIL"), ("wall_clock_s", round(record.wall_clock, 3))]
        items += [(f"meta.{k}", str(v)) for k, v in record.meta.items()]
        scalars = {k: v for k, v in record.outputs.items() if isinstance(v, (int, float, str, bool))}
        items += [(f"outputs.{k}", v) for k, v in scalars.items()]
        return pd.DataFrame(items, columns=["Item", "Value"])


class ExcelWriter:
    """Results workbook writer"""

    def __init__(self):
        self.formatter = RecordFormatter()

    def write_excel_file(self, record: ResultRecord, output_path: str) -> Tuple[bool, str]:
        """
        Results and Summary sheets for one record

        Returns:
            (success, message)
        """
        try:
            with pd.ExcelWriter(output_path, engine="xlsxwriter",
                                engine_kwargs={"options": {"nan_inf_to_errors": True}}) as writer:
                self._write_sheet(writer, "Results", self.formatter.results_frame(record))
                self._write_sheet(writer, "Summary", self.formatter.summary_frame(record))
            return True, f"workbook written: {output_path}"
        except Exception as e:
            logger.error(f"writing workbook failed: {str(e)}")
            return False, f"writing workbook failed: {str(e)}"

    def _write_sheet(self, writer: pd.ExcelWriter, name: str, df: pd.DataFrame) -> None:
        df.to_excel(writer, sheet_name=name, index=False)
        workbook = writer.book
        worksheet = writer.sheets[name]
        header_format = workbook.add_format({
            "bold": True,
            "text_wrap": True,
            "valign": "top",
            "fg_color": "#D7E4BD",
            "border": 1,
        })
        for col_num, value in enumerate(df.columns.values):
            worksheet.write(0, col_num, value, header_format)
            worksheet.set_column(col_num, col_num, max(12, len(str(value)) + 2))


class ResultWriter:
    """Single writer for every file an experiment produces"""

    def __init__(self):
        self.formatter = RecordFormatter()
        self.excel_writer = ExcelWriter()

    def write_records(self, records: List[ResultRecord], output_path: str, append: bool = False) -> str:
        """Records as JSON lines; returns the path"""
        directory = os.path.dirname(output_path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(output_path, "a" if append else "w", encoding="utf-8") as handle:
            for record in records:
                handle.write(self.formatter.to_json_line(record) + "\n")
        logger.info(f"{len(records)} record(s) written to {output_path}")
        return output_path

    def write_sweep_csv(self, record: ResultRecord, output_path: str) -> List[str]:
        """One `alpha,empirical_mean,dr_lower,dr_upper,reg_value` file per certified state"""
        if record.experiment != "sandwich":
            return []
        stem, _ = os.path.splitext(output_path)
        states = sorted({entry["state"] for point in record.outputs["sweep"] for entry in point["states"]})
        paths = []
        for s in states:
            path = f"{stem}.s{s}.csv"
            self.formatter.sweep_frame(record, s).to_csv(path, index=False, float_format="%.17g")
            paths.append(path)
        return paths

    def write_all(self, record: ResultRecord, output_path: str) -> Dict[str, List[str]]:
        """
        JSON line plus CSV projections and the workbook

        Args:
            record: experiment result
            output_path: JSON-lines path; side files share its stem

        Returns:
            paths written, by kind
        """
        written = {"jsonl": [self.write_records([record], output_path)]}
        written["csv"] = self.write_sweep_csv(record, output_path)
        stem, _ = os.path.splitext(output_path)
        success, message = self.excel_writer.write_excel_file(record, stem + ".xlsx")
        written["xlsx"] = [stem + ".xlsx"] if success else []
        if not success:
            logger.warning(message)
        return written


def read_records(path: str) -> List[Dict]:
    """Parse a JSON-lines results file"""
    with open(path, "r", encoding="utf-8") as handle:
        return [json.loads(line) for line in handle if line.strip()]
