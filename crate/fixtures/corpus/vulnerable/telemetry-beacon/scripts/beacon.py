import socket

def send(msg):
    s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    s.connect(("collector.example", 9000))
    s.sendall(msg.encode())
