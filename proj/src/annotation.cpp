#include "alod/annotation.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "alod/errors.hpp"

namespace alod {

namespace pt = boost::property_tree;

bool DatasetIndex::has_class(std::string_view name) const {
    return std::find(class_list.begin(), class_list.end(), name) != class_list.end();
}

std::vector<std::string> DatasetIndex::image_ids() const {
    std::vector<std::string> ids;
    ids.reserve(images.size());
    for (const auto& [id, _] : images) ids.push_back(id);
    return ids;
}

void DatasetIndex::add(ImageAnnotation annotation) {
    for (const auto& box : annotation.boxes)
        if (!has_class(box.class_name)) class_list.push_back(box.class_name);
    auto id = annotation.image_id;
    if (!images.emplace(id, std::move(annotation)).second)
        throw DuplicateRecordError("duplicate image id '" + id + "'");
}

void validate_box(const GroundTruthBox& box, int width, int height) {
    if (box.class_name.empty()) throw InvariantError("box with empty class name");
    if (box.xmin >= box.xmax || box.ymin >= box.ymax)
        throw InvariantError("inverted box for class '" + box.class_name + "'");
    if (width > 0 && height > 0 &&
        (box.xmin < 0 || box.ymin < 0 || box.xmax > width || box.ymax > height))
        throw InvariantError("box for class '" + box.class_name + "' exceeds image bounds");
}

namespace {

const pt::ptree& require_child(const pt::ptree& node, const std::string& name) {
    auto child = node.get_child_optional(name);
    if (!child) throw SchemaError(name);
    return *child;
}

int require_int(const pt::ptree& node, const std::string& name) {
    const auto& child = require_child(node, name);
    std::string text = child.get_value<std::string>();
    // Some VOC files carry fractional coordinates such as "273.5".
    try {
        std::size_t used = 0;
        double value = std::stod(text, &used);
        if (used == 0) throw SchemaError(name, "not a number");
        return static_cast<int>(value);
    } catch (const std::logic_error&) {
        throw SchemaError(name, "not a number: '" + text + "'");
    }
}

std::string trimmed(std::string s) {
    auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

}  // namespace

ImageAnnotation parse_voc_annotation(std::string_view xml_text, ClassPolicy policy,
                                     std::vector<std::string>& class_list) {
    pt::ptree tree;
    std::istringstream in{std::string(xml_text)};
    try {
        pt::read_xml(in, tree, pt::xml_parser::trim_whitespace);
    } catch (const pt::xml_parser_error& e) {
        throw ParseError(e.message(), static_cast<long>(e.line()));
    }
    const auto& root = require_child(tree, "annotation");

    ImageAnnotation out;
    out.image_id = trimmed(root.get<std::string>("filename", ""));
    if (auto dot = out.image_id.rfind('.'); dot != std::string::npos) out.image_id.resize(dot);
    if (auto size = root.get_child_optional("size")) {
        out.width = require_int(*size, "width");
        out.height = require_int(*size, "height");
    }

    std::vector<std::string> added;
    auto known = [&](const std::string& name) {
        return std::find(class_list.begin(), class_list.end(), name) != class_list.end() ||
               std::find(added.begin(), added.end(), name) != added.end();
    };
    for (const auto& [tag, object] : root) {
        if (tag != "object") continue;
        GroundTruthBox box;
        box.class_name = trimmed(require_child(object, "name").get_value<std::string>());
        box.difficult = object.get<int>("difficult", 0) != 0;
        const auto& bndbox = require_child(object, "bndbox");
        box.xmin = require_int(bndbox, "xmin");
        box.ymin = require_int(bndbox, "ymin");
        box.xmax = require_int(bndbox, "xmax");
        box.ymax = require_int(bndbox, "ymax");
        validate_box(box, out.width, out.height);
        if (!known(box.class_name)) {
            if (policy == ClassPolicy::strict) throw UnknownClassError(box.class_name);
            added.push_back(box.class_name);
        }
        out.boxes.push_back(std::move(box));
    }
    class_list.insert(class_list.end(), added.begin(), added.end());
    return out;
}

std::string to_voc_xml(const ImageAnnotation& annotation) {
    std::ostringstream os;
    os << "<annotation>\n"
       << "  <filename>" << annotation.image_id << ".jpg</filename>\n"
       << "  <size>\n"
       << "    <width>" << annotation.width << "</width>\n"
       << "    <height>" << annotation.height << "</height>\n"
       << "    <depth>3</depth>\n"
       << "  </size>\n";
    for (const auto& box : annotation.boxes) {
        os << "  <object>\n"
           << "    <name>" << box.class_name << "</name>\n"
           << "    <difficult>" << (box.difficult ? 1 : 0) << "</difficult>\n"
           << "    <bndbox>\n"
           << "      <xmin>" << box.xmin << "</xmin>\n"
           << "      <ymin>" << box.ymin << "</ymin>\n"
           << "      <xmax>" << box.xmax << "</xmax>\n"
           << "      <ymax>" << box.ymax << "</ymax>\n"
           << "    </bndbox>\n"
           << "  </object>\n";
    }
    os << "</annotation>\n";
    return os.str();
}

DatasetIndex load_voc_directory(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw ConfigError("annotation directory not found: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".xml") files.push_back(entry.path());
    std::sort(files.begin(), files.end());

    DatasetIndex dataset;
    for (const auto& file : files) {
        std::ifstream in(file);
        std::stringstream buffer;
        buffer << in.rdbuf();
        try {
            auto annotation = parse_voc_annotation(buffer.str(), ClassPolicy::register_new, dataset.class_list);
            annotation.image_id = file.stem().string();
            dataset.add(std::move(annotation));
        } catch (const ParseError& e) {
            throw ParseError(file.string() + ": " + e.what(), e.line());
        } catch (const SchemaError& e) {
            throw SchemaError(e.element(), file.string());
        } catch (const InvariantError& e) {
            throw InvariantError(file.string() + ": " + e.what());
        }
    }
    return dataset;
}

void write_voc_directory(const DatasetIndex& dataset, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (const auto& [id, annotation] : dataset.images) {
        std::ofstream out(dir / (id + ".xml"));
        out << to_voc_xml(annotation);
    }
}

ClassSplit split_by_classes(const DatasetIndex& dataset, const std::set<std::string>& new_classes) {
    for (const auto& name : new_classes)
        if (!dataset.has_class(name)) throw UnknownClassError(name);

    ClassSplit split;
    for (const auto& name : dataset.class_list)
        (new_classes.count(name) ? split.part_b : split.part_a).class_list.push_back(name);

    for (const auto& [id, annotation] : dataset.images) {
        std::size_t in_new = 0;
        for (const auto& box : annotation.boxes) in_new += new_classes.count(box.class_name);
        if (in_new == 0)
            split.part_a.images.emplace(id, annotation);
        else if (in_new == annotation.boxes.size())
            split.part_b.images.emplace(id, annotation);
        else
            split.dropped.push_back(id);
    }
    return split;
}

}  // namespace alod
