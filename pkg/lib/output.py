#!/usr/bin/env python3
"""
Output format adapters for delaymp results
"""
import csv
import json
from pathlib import Path

import numpy as np
import yaml


def _plain(value):
    """numpy scalars and arrays as built-in Python values"""
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _cell(value):
    value = _plain(value)
    if isinstance(value, float):
        return repr(value)
    return value


def _comment_lines(header):
    if not header:
        return []
    if isinstance(header, dict):
        return [f"# {key}: {value}" for key, value in header.items()]
    return [f"# {line}" for line in header]


def write_json(data, output_file, header=None):
    """Write data as JSON"""
    payload = _plain(data)
    if header:
        payload = {"manifest": _plain(header), "data": payload}
    with open(output_file, "w") as f:
        json.dump(payload, f, indent=2)


def write_csv(data, output_file, header=None):
    """Write a list of records as CSV after a '#' comment header"""
    if isinstance(data, dict):
        rows = [data]
    elif isinstance(data, list):
        rows = data
    else:
        rows = [{"value": data}]

    with open(output_file, "w", newline="") as f:
        for line in _comment_lines(header):
            f.write(line + "\n")
        if not rows:
            return
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _cell(value) for key, value in row.items()})


def write_yaml(data, output_file, header=None):
    """Write data as YAML"""
    payload = _plain(data)
    with open(output_file, "w") as f:
        for line in _comment_lines(header):
            f.write(line + "\n")
        yaml.dump(payload, f, default_flow_style=False, sort_keys=False)


def write_text(text, output_file, header=None):
    with open(output_file, "w") as f:
        for line in _comment_lines(header):
            f.write(line + "\n")
        f.write(text)


def write_data(data, output_file, format_type=None, header=None):
    """Write data in specified format, auto-detect from extension if not
    specified"""
    output_path = Path(output_file)

    if format_type is None:
        ext = output_path.suffix.lower()
        if ext == ".json":
            format_type = "json"
        elif ext == ".csv":
            format_type = "csv"
        elif ext in [".yaml", ".yml"]:
            format_type = "yaml"
        else:
            format_type = "json"

    output_path.parent.mkdir(parents=True, exist_ok=True)
    if format_type == "json":
        write_json(data, output_file, header)
    elif format_type == "csv":
        write_csv(data, output_file, header)
    elif format_type == "yaml":
        write_yaml(data, output_file, header)
    else:
        raise ValueError(f"Unsupported format: {format_type}")

    return format_type


def read_csv_body(path):
    """CSV lines after the '#' comment header"""
    with open(path, "r") as f:
        return [line for line in f.read().splitlines() if not line.startswith("#")]
