import sys

def main():
    expr = open(sys.argv[1]).read()
    print(eval(expr))
