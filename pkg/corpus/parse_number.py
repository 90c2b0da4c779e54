try:
    value = int(text)
except (ValueError, TypeError):
    value = -1
print(value)
