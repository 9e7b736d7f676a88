"""Convert a .npy embedding matrix into a SEMB file plus a tokenizer metadata skeleton.

The skeleton marks ``--special`` ids and every row beyond ``--v-tok`` is left
to the partition builder as padding; edit it before building neighbors if the
tokenizer has added or control tokens.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from semsam_bench.embeddings import EmbeddingMatrix, save_embeddings


def export(npy_path, out_path, meta_path=None, v_tok=None, special_ids=()):
    matrix = EmbeddingMatrix(np.load(npy_path, allow_pickle=False))
    save_embeddings(matrix, out_path)
    if meta_path:
        meta = {
            "v_tok": v_tok or matrix.rows,
            "special_ids": sorted(set(special_ids)),
            "added_ids": [],
            "control_ids": [],
        }
        Path(meta_path).write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return matrix


if __name__ == '__main__':
    parser = argparse.ArgumentParser(description='Export a .npy embedding matrix as SEMB.')
    parser.add_argument('input', help='Path to the (rows, dim) .npy matrix')
    parser.add_argument('output', help='Path to the output .semb file')
    parser.add_argument('--meta', help='Also write tokenizer metadata JSON here')
    parser.add_argument('--v-tok', type=int, help='Tokenizer vocabulary size (default: matrix rows)')
    parser.add_argument('--special', type=int, nargs='*', default=[], help='Special token ids')
    args = parser.parse_args()

    try:
        matrix = export(args.input, args.output, args.meta, args.v_tok, args.special)
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        sys.exit(1)
    print(f"SEMB file created: {args.output} ({matrix.rows} x {matrix.dim})")
