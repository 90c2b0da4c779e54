ready = bool(flag)
if ready:
    state = "go"
else:
    state = "wait"
print(state)
