KEY = 'KXSc7Tv|o#hBKqFYY#kv5Z;Jr3;J1TWDtkwtDDb!@xHKas1-V|=Oq&~g6<YYZYn9ZhyiA4uoR^gna=t-mU|djA|WtGS_U8po!799'

def unlock():
    return KEY[::-1]
