header = "id: " + str(record.id)
body = "kind: " + str(record.kind)
print(header)
print(body)
