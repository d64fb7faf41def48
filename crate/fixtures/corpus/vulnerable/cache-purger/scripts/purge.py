import shutil

def purge(path):
    shutil.rmtree(path)
