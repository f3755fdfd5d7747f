#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
Generate alpha-sweep charts of the sandwich chain and out-of-sample margin histograms
from a JSON-lines results file
"""

import argparse
import os

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import seaborn as sns

from excel_generator import read_records

# Set matplotlib to use a non-interactive backend
plt.switch_backend('Agg')

CHAIN_SERIES = [
    ('empirical_mean', 'empirical mean'),
    ('dr_upper', 'oracle (upper)'),
    ('dr_lower', 'dual (lower)'),
    ('reg_value', 'mean - L alpha'),
]


def load_sweeps(records):
    """Long table of sandwich sweeps: one row per (record, alpha, state)"""
    rows = []
    for k, record in enumerate(records):
        if record['experiment'] != 'sandwich':
            continue
        for point in record['outputs']['sweep']:
            for entry in point['states']:
                rows.append({'record': k, **{key: entry[key] for key in
                             ['state', 'alpha', 'empirical_mean', 'dr_lower', 'dr_upper', 'reg_value', 'passed']}})
    return pd.DataFrame(rows)


def plot_sandwich(df, state, filename):
    """Chain values against alpha at one state"""
    data = df[df['state'] == state].sort_values('alpha')
    long = data.melt(id_vars=['alpha'], value_vars=[c for c, _ in CHAIN_SERIES],
                     var_name='series', value_name='value')
    long['series'] = long['series'].map(dict(CHAIN_SERIES))

    plt.figure(figsize=(8, 5))
    sns.lineplot(x='alpha', y='value', hue='series', style='series', markers=True, data=long)
    failed = data[~data['passed'].astype(bool)]
    if not failed.empty:
        plt.scatter(failed['alpha'], failed['dr_lower'], color='red', marker='x', s=80, label='chain violated')
    plt.title(f'Sandwich chain at state {state}')
    plt.xlabel('alpha')
    plt.ylabel('value')
    plt.legend()
    plt.tight_layout()
    plt.savefig(filename, dpi=150, bbox_inches='tight')
    plt.close()
    return filename


def plot_margins(record, filename):
    """Histogram of true value minus certificate over out-of-sample trials"""
    margins = np.asarray(record['outputs']['margins'], dtype=float)
    plt.figure(figsize=(8, 5))
    sns.histplot(margins, bins=min(30, max(5, margins.size // 5)), color='green')
    plt.axvline(0.0, color='red', linestyle='--')
    plt.title(f"Certificate margins, coverage {record['outputs']['coverage']:.3f}")
    plt.xlabel('min_s (true value - certificate)')
    plt.tight_layout()
    plt.savefig(filename, dpi=150, bbox_inches='tight')
    plt.close()
    return filename


def generate_charts(results_path, output_dir='.'):
    """Every chart the records in results_path support; returns the file names"""
    records = read_records(results_path)
    os.makedirs(output_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(results_path))[0]
    charts = []

    sweeps = load_sweeps(records)
    if not sweeps.empty:
        for state in sorted(sweeps['state'].unique()):
            charts.append(plot_sandwich(sweeps, state, os.path.join(output_dir, f'{stem}_sandwich_s{state}.png')))
    for k, record in enumerate(records):
        if record['experiment'] == 'oos' and record['outputs'].get('margins'):
            charts.append(plot_margins(record, os.path.join(output_dir, f'{stem}_oos_{k}.png')))
    return charts


def main(argv=None):
    """Main function"""
    parser = argparse.ArgumentParser(description='Charts from a results file')
    parser.add_argument('results', help='JSON-lines results file')
    parser.add_argument('--outdir', default='.', help='directory for the PNG files')
    args = parser.parse_args(argv)

    print("=" * 50)
    print("Sandwich and coverage charts")
    print("=" * 50)
    charts = generate_charts(args.results, args.outdir)
    for chart in charts:
        print(f"Chart saved as: {chart}")
    if not charts:
        print("No sandwich or oos records to plot")
    return 0


if __name__ == "__main__":
    main()
