if "@" in email:
    domain = email.split("@")[1]
else:
    domain = "unknown"
print(domain)
