inner = wrapper.payload
kind = str(inner)
if kind:
    print(kind)
