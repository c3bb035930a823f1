class Pipeline:
    def __init__(self, cfg):
        self.cfg = cfg

    def run(self):
        outline = self.plan()
        return [self.write(section) for section in outline]

    def plan(self):
        return ["introduction", "methods", "conclusion"]

    def write(self, section):
        return f"# {section}"
