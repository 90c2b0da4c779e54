name = person.name
if name:
    greeting = "Hello, " + name
else:
    greeting = "Hello, stranger"
print(greeting)
