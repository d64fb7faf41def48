import csv
import sys


def format_table(path):
    with open(path, newline='') as handle:
        rows = list(csv.reader(handle))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    for row in rows:
        print('| ' + ' | '.join(c.ljust(w) for c, w in zip(row, widths)) + ' |')


if __name__ == '__main__':
    format_table(sys.argv[1])
